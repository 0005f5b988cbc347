use binpack_adversary::analysis::{mask_stats, spearman};
use binpack_adversary::attack::{apply_mask, Mask};
use binpack_adversary::classifier::{gru_forward, gru_hidden_states, Normalization, RecurrentWeights};
use binpack_adversary::distribution_check::ks_two_sample;
use binpack_adversary::instances::{Instance, SizeBounds};
use binpack_adversary::packing::{pack_best_fit, pack_first_fit};
use proptest::prelude::*;

/// Fewest bins for `items`, by trying every assignment in canonical form.
fn optimal_bins(items: &[u32], cap: u32) -> usize {
    fn go(items: &[u32], cap: u32, fills: &mut Vec<u32>, best: &mut usize) {
        if fills.len() >= *best {
            return;
        }
        let Some((&first, rest)) = items.split_first() else {
            *best = fills.len();
            return;
        };
        for b in 0..fills.len() {
            if fills[b] + first <= cap {
                fills[b] += first;
                go(rest, cap, fills, best);
                fills[b] -= first;
            }
        }
        fills.push(first);
        go(rest, cap, fills, best);
        fills.pop();
    }
    let mut best = items.len() + 1;
    go(items, cap, &mut Vec::new(), &mut best);
    best
}

fn items_strategy(max_len: usize) -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(20u32..=100, 1..=max_len)
}

proptest! {
    #[test]
    fn packing_conserves_and_respects_capacity(items in items_strategy(60)) {
        let total: u32 = items.iter().sum();
        for r in [pack_first_fit(&items, 150).unwrap(), pack_best_fit(&items, 150).unwrap()] {
            prop_assert_eq!(r.bin_fills.iter().sum::<u32>(), total);
            prop_assert!(r.bin_fills.iter().all(|&f| f > 0 && f <= 150));
            prop_assert_eq!(r.n_bins, r.bin_fills.len());
            prop_assert!(r.n_bins >= total.div_ceil(150) as usize);
            prop_assert!(r.falkenauer > 0.0 && r.falkenauer <= 1.0);
        }
    }

    #[test]
    fn packing_is_online(items in items_strategy(40)) {
        // The packing of a prefix is the state after that many steps.
        for k in 1..items.len() {
            let before = pack_first_fit(&items[..k], 150).unwrap();
            let after = pack_first_fit(&items[..=k], 150).unwrap();
            prop_assert!(after.n_bins >= before.n_bins);
            let grown: Vec<_> = before.bin_fills.iter().zip(&after.bin_fills).filter(|(a, b)| a != b).collect();
            prop_assert!(grown.len() + (after.n_bins - before.n_bins) == 1);
            let before = pack_best_fit(&items[..k], 150).unwrap();
            let after = pack_best_fit(&items[..=k], 150).unwrap();
            prop_assert!(after.n_bins >= before.n_bins);
        }
    }

    #[test]
    fn heuristics_never_beat_optimum(items in prop::collection::vec(1u32..=10, 1..=8)) {
        let opt = optimal_bins(&items, 10);
        prop_assert!(pack_first_fit(&items, 10).unwrap().n_bins >= opt);
        prop_assert!(pack_best_fit(&items, 10).unwrap().n_bins >= opt);
    }

    #[test]
    fn masks_move_items_by_at_most_one(
        (items, mask) in items_strategy(80).prop_flat_map(|items| {
            let n = items.len();
            (Just(items), prop::collection::vec(-1i8..=1, n))
        })
    ) {
        let inst = Instance::new("p", items.clone());
        let mask = Mask::new(mask).unwrap();
        let out = apply_mask(&inst, &mask, SizeBounds::DEFAULT).unwrap();
        prop_assert_eq!(out.items.len(), items.len());
        for (a, b) in items.iter().zip(&out.items) {
            prop_assert!(a.abs_diff(*b) <= 1);
            prop_assert!((20..=100).contains(b));
        }
        let s = mask_stats(&mask, &items, SizeBounds::DEFAULT);
        prop_assert_eq!(s.sum_difference, out.item_sum() - inst.item_sum());
        prop_assert!(s.effective_changes <= s.n_changes);
        prop_assert!(s.longest_positive_sequence <= s.longest_sequence);
        prop_assert!(s.longest_sequence <= s.n_changes);
    }

    #[test]
    fn spearman_bounds_and_monotone_invariance(
        pairs in prop::collection::vec((-1000i32..1000, -1000i32..1000), 3..40)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        prop_assume!(!constant(&x) && !constant(&y));
        let r = spearman(&x, &y).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r.rho));
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        prop_assert!((spearman(&x, &x).unwrap().rho - 1.0).abs() < 1e-12);
        let tx: Vec<f64> = x.iter().map(|v| v * v * v + 7.0).collect();
        let ty: Vec<f64> = y.iter().map(|v| (v / 500.0).exp()).collect();
        prop_assert!((spearman(&tx, &ty).unwrap().rho - r.rho).abs() < 1e-12);
    }

    #[test]
    fn ks_symmetric_and_bounded(a in items_strategy(50), b in items_strategy(50)) {
        let ab = ks_two_sample(&a, &b).unwrap();
        let ba = ks_two_sample(&b, &a).unwrap();
        prop_assert_eq!(ab.statistic, ba.statistic);
        prop_assert!((0.0..=1.0).contains(&ab.statistic));
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
        prop_assert_eq!(ab.reject_at_0_05, ab.p_value < 0.05);
        let mut sa = a.clone();
        sa.reverse();
        prop_assert_eq!(ks_two_sample(&a, &sa).unwrap().statistic, 0.0);
    }

    #[test]
    fn gru_hidden_state_bounded(
        h in 1usize..6,
        seed in any::<u64>(),
        items in items_strategy(30),
    ) {
        let w = random_weights(h, seed, 2.0);
        for state in gru_hidden_states(&w, &items).unwrap() {
            prop_assert!(state.iter().all(|v| v.abs() < 1.0));
        }
        let (p_bf, p_ff) = gru_forward(&w, &items).unwrap();
        prop_assert!((p_bf + p_ff - 1.0).abs() < 1e-12);
    }
}

/// Weights drawn uniformly from `[-scale, scale]` by a small LCG.
fn random_weights(h: usize, seed: u64, scale: f64) -> RecurrentWeights {
    let mut state = seed | 1;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
    };
    let mut w = RecurrentWeights::zeros(h, Normalization { offset: 60.0, scale: 40.0 });
    for m in [&mut w.w_z, &mut w.u_z, &mut w.w_r, &mut w.u_r, &mut w.w_h, &mut w.u_h, &mut w.w_out] {
        for v in m.iter_mut().flatten() {
            *v = next();
        }
    }
    for v in [&mut w.b_z, &mut w.b_r, &mut w.b_h, &mut w.b_out] {
        for x in v.iter_mut() {
            *x = next();
        }
    }
    w
}

#[test]
fn first_fit_is_order_sensitive() {
    assert_eq!(pack_first_fit(&[6, 5, 5, 4], 10).unwrap().n_bins, 2);
    assert_eq!(pack_first_fit(&[5, 6, 4, 5], 10).unwrap().n_bins, 3);
}

#[test]
fn gru_is_order_sensitive() {
    let w = random_weights(4, 17, 1.5);
    let seq = [20, 35, 90, 100, 45];
    let mut rev = seq;
    rev.reverse();
    let (a, _) = gru_forward(&w, &seq).unwrap();
    let (b, _) = gru_forward(&w, &rev).unwrap();
    assert!((a - b).abs() > 1e-9);
}

#[test]
fn exhaustive_oracle_sanity() {
    assert_eq!(optimal_bins(&[6, 5, 5, 4], 10), 2);
    assert_eq!(optimal_bins(&[7, 7, 7], 10), 3);
    assert_eq!(optimal_bins(&[3, 3, 3, 1], 10), 1);
}
