//! Earliest-arrival routing against exhaustive enumeration on small random instances.

mod common;

use common::oracle::{check_router, random_instance};
use ipnsim::topology::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn router_matches_exhaustive_search() {
    let st = check_router(0x5eed, 1500, 12, false);
    assert!(st.mismatches.is_empty(), "{:#?}", &st.mismatches[..st.mismatches.len().min(5)]);
    // the sample must exercise both waiting and delivery
    assert!(st.delivered > 300, "only {} delivered", st.delivered);
    assert!(st.waited > 50, "only {} routes waited", st.waited);
}

#[test]
fn endpoints_never_relay() {
    let st = check_router(41, 1500, 12, true);
    assert!(st.mismatches.is_empty(), "{:#?}", &st.mismatches[..st.mismatches.len().min(5)]);
    assert!(st.delivered > 200, "only {} delivered", st.delivered);
}

#[test]
fn one_to_all_agrees_with_point_queries() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..600 {
        // half the instances have endpoint-only nodes
        let inst = random_instance(&mut rng, 12, i % 2 == 1);
        let plan = inst.plan();
        let router = inst.router(&plan);
        let src = NodeId(rng.gen_range(0..inst.n) as u32);
        let t0 = rng.gen_range(0.0..60.0);
        let tree = router.earliest_arrival_all(src, t0);
        for d in 0..inst.n as u32 {
            if d == src.0 {
                continue;
            }
            assert_eq!(tree.route(NodeId(d)), router.earliest_arrival(src, NodeId(d), t0));
        }
    }
}
