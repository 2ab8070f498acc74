use mapspan::experiments::*;

#[test]
fn gradcheck_suite_passes_every_case() {
    let rows = gradcheck_suite(1e-4, 0).unwrap();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!(r.passed, "{r:?}");
        assert!(r.coordinates > 30, "{r:?}");
    }
}

#[test]
fn sampled_slice_is_cheaper_at_large_n() {
    let rows = matrix_cost_bench(&[512], 20, 32, 1, 512, 3).unwrap();
    assert_eq!(rows[0].sampled_cells, 400);
    assert_eq!(rows[0].full_cells, 262_144);
    assert!(rows[0].sampled_ms < rows[0].full_ms.unwrap(), "{rows:?}");
}
