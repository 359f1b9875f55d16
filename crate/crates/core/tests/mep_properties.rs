use interclip::mep::{entropy, mep_oracle, mep_run, MemoryState};
use interclip::numerics::exact_sum;
use proptest::prelude::*;

/// Few distinct probabilities, so entropy ties and argmax ties are common.
const P0: [f64; 9] = [0.5, 0.6, 0.4, 0.7, 0.3, 0.9, 0.1, 0.99, 0.01];

type Item = ([f64; 2], Vec<f64>);

fn unit(v: [f64; 3]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn item() -> impl Strategy<Value = Item> {
    (
        0..P0.len(),
        prop::array::uniform3(-1.0f64..1.0)
            .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3),
    )
        .prop_map(|(i, v)| ([P0[i], 1.0 - P0[i]], unit(v)))
}

fn stream(max: usize) -> impl Strategy<Value = Vec<Item>> {
    prop::collection::vec(item(), 0..max)
}

/// The `min(L, count)` smallest entropies routed to channel `c`, sorted.
fn smallest(stream: &[Item], c: u8, l: usize) -> Vec<f64> {
    let mut e: Vec<f64> = stream
        .iter()
        .filter(|(p, _)| u8::from(p[1] > p[0]) == c)
        .map(|(p, _)| entropy(p).unwrap())
        .collect();
    e.sort_by(f64::total_cmp);
    e.truncate(l);
    e
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn run_matches_oracle(s in stream(120), l in 1usize..10) {
        prop_assert_eq!(mep_run(&s, l, 3).unwrap(), mep_oracle(&s, l, 3).unwrap());
    }

    #[test]
    fn memory_keeps_the_l_smallest_entropies(s in stream(150), l in 1usize..12) {
        let mut m = MemoryState::new(l, 3).unwrap();
        for (p, h) in &s {
            m.step(*p, h).unwrap();
        }
        for c in 0..2u8 {
            prop_assert_eq!(sorted(m.entropies(c as usize)), smallest(&s, c, l));
        }
    }

    #[test]
    fn channels_are_isolated(s in stream(80), l in 1usize..6) {
        let mut m = MemoryState::new(l, 3).unwrap();
        for (p, h) in &s {
            let c = usize::from(p[1] > p[0]);
            let other = 1 - c;
            let before: (Vec<f64>, Vec<Vec<f64>>) = (
                m.entropies(other).to_vec(),
                (0..m.fill(other)).map(|k| m.feature(other, k).to_vec()).collect(),
            );
            m.step(*p, h).unwrap();
            let after: (Vec<f64>, Vec<Vec<f64>>) = (
                m.entropies(other).to_vec(),
                (0..m.fill(other)).map(|k| m.feature(other, k).to_vec()).collect(),
            );
            prop_assert_eq!(before, after);
        }
    }

    #[test]
    fn stored_state_stays_valid(s in stream(100), l in 1usize..8) {
        let mut m = MemoryState::new(l, 3).unwrap();
        for (p, h) in &s {
            let pred = m.step(*p, h).unwrap();
            prop_assert!((pred.final_probs[0] + pred.final_probs[1] - 1.0).abs() < 1e-12);
            for c in 0..2 {
                prop_assert!(m.fill(c) <= l);
                for (k, e) in m.entropies(c).iter().enumerate() {
                    prop_assert!((0.0..=std::f64::consts::LN_2).contains(e));
                    let n = m.feature(c, k).iter().map(|x| x * x).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-5);
                }
            }
        }
        prop_assert_eq!(m.samples_seen(), s.len());
    }

    #[test]
    fn outputs_depend_only_on_the_prefix(s in stream(60), cut in 0usize..60, l in 1usize..5) {
        let cut = cut.min(s.len());
        let full = mep_run(&s, l, 3).unwrap();
        let prefix = mep_run(&s[..cut], l, 3).unwrap();
        prop_assert_eq!(&full[..cut], &prefix[..]);
    }

    #[test]
    fn self_vote_is_present_while_the_channel_has_room(s in stream(40)) {
        // with L at least the stream length nothing is ever rejected, so each
        // sample's logit for its own channel includes its own similarity of 1
        let l = s.len().max(1);
        let mut m = MemoryState::new(l, 3).unwrap();
        for (p, h) in &s {
            let c = usize::from(p[1] > p[0]);
            m.step(*p, h).unwrap();
            prop_assert_eq!(m.feature(c, m.fill(c) - 1), &h[..]);
        }
    }

    #[test]
    fn exact_sum_ignores_order(
        (xs, shuffled) in prop::collection::vec(-1e6f64..1e6, 0..64)
            .prop_flat_map(|v| (Just(v.clone()), Just(v).prop_shuffle()))
    ) {
        prop_assert_eq!(exact_sum(xs).to_bits(), exact_sum(shuffled).to_bits());
    }
}

#[test]
fn all_tie_streams_match_the_oracle() {
    let h = unit([0.3, -0.2, 0.9]);
    let g = unit([-0.5, 0.1, 0.2]);
    let s: Vec<Item> = (0..300)
        .map(|i| ([0.7, 0.3], if i % 3 == 0 { h.clone() } else { g.clone() }))
        .collect();
    for l in [1, 4, 64] {
        let run = mep_run(&s, l, 3).unwrap();
        assert_eq!(run, mep_oracle(&s, l, 3).unwrap());
        // the incumbent wins every tie, so the first L samples stay
        let mut m = MemoryState::new(l, 3).unwrap();
        for (p, f) in &s {
            m.step(*p, f).unwrap();
        }
        for k in 0..l {
            assert_eq!(m.feature(0, k), &s[k].1[..]);
        }
    }
}

#[test]
fn large_capacity_never_evicts() {
    let s: Vec<Item> = (0..50)
        .map(|i| {
            let p = P0[i % P0.len()];
            ([p, 1.0 - p], unit([i as f64, 1.0, -2.0]))
        })
        .collect();
    let mut m = MemoryState::new(64, 3).unwrap();
    for (p, h) in &s {
        m.step(*p, h).unwrap();
    }
    assert_eq!(m.fill(0) + m.fill(1), s.len());
}

#[test]
fn empty_stream_gives_empty_output() {
    assert!(mep_run::<f64>(&[], 4, 3).unwrap().is_empty());
    assert!(mep_oracle::<f64>(&[], 4, 3).unwrap().is_empty());
}
