mod common;

use common::{lexicon_toy, untie};
use spbwe::embedding::Side;
use spbwe::micronmt::finite_diff_check;

/// Shared rows collect the sum of what the two sides would receive if
/// their storage were separate but held the same values.
#[test]
fn shared_gradient_is_the_sum_of_untied_gradients() {
    for lambda in [[1.0; 3], [0.5; 3], [0.9, 0.7, 0.5]] {
        let (tied, pipeline) = lexicon_toy(lambda, 8, 4);
        let untied = untie(&tied, &pipeline.pairing);
        let batch = &pipeline.data;
        let (loss_t, g_t) = tied.loss_and_grad(batch).unwrap();
        let (loss_u, g_u) = untied.loss_and_grad(batch).unwrap();
        assert!((loss_t - loss_u).abs() < 1e-12);
        let layout = tied.emb.layout();
        for p in &pipeline.pairing.pairs {
            let w = layout.shared_width(p.category);
            let tied_src = g_t.view(Side::Src, p.src_id).unwrap();
            let tied_tgt = g_t.view(Side::Tgt, p.tgt_id).unwrap();
            let gx = g_u.lookup(Side::Src, p.src_id).unwrap();
            let gy = g_u.lookup(Side::Tgt, p.tgt_id).unwrap();
            for k in 0..w {
                assert!((tied_src.shared[k] - (gx[k] + gy[k])).abs() < 1e-10);
                // Both views read the same shared storage.
                assert_eq!(tied_src.shared[k], tied_tgt.shared[k]);
            }
            for k in w..8 {
                assert!((tied_src.private[k - w] - gx[k]).abs() < 1e-10);
                assert!((tied_tgt.private[k - w] - gy[k]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn every_block_kind_passes_the_gradient_check() {
    for lambda in [[0.0; 3], [0.5; 3], [1.0; 3], [0.9, 0.7, 0.5]] {
        let (m, p) = lexicon_toy(lambda, 8, 2);
        let report = finite_diff_check(&m, &p.data, 120, 1e-4, 3).unwrap();
        let blocks: std::collections::BTreeSet<_> = report.samples.iter().map(|s| s.block.clone()).collect();
        let has = |prefix: &str| blocks.iter().any(|b| b.starts_with(prefix));
        if lambda.iter().any(|&l| l < 1.0) {
            assert!(has("Px_") && has("Py_"), "{blocks:?}");
        }
        if lambda != [0.0; 3] {
            assert!(has("S_"), "{blocks:?}");
        }
        assert!(report.max_rel_error < 1e-4, "{lambda:?}: {}", report.max_rel_error);
    }
}
