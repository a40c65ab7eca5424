use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use repomech::decompose::pair_totals;
use repomech::fixed::Money;
use repomech::generate::generate_book;
use repomech::ingest::{read_csv, write_csv};
use repomech::network::{Role, SplitPolicy};
use repomech::pipeline::{run_stages, to_json, DecompositionView};
use repomech::settlement::net_obligations;
use repomech::trade::RepoTrade;

fn book() -> impl Strategy<Value = Vec<RepoTrade>> {
    (any::<u64>(), 2usize..=10, 0usize..=40)
        .prop_map(|(seed, agents, trades)| generate_book(seed, agents, trades).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trade_order_does_not_matter(trades in book(), perm in any::<u64>()) {
        let a = run_stages(trades.clone(), &SplitPolicy::default()).unwrap();
        let mut shuffled = trades;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm));
        let b = run_stages(shuffled, &SplitPolicy::default()).unwrap();
        prop_assert_eq!(to_json(&a.netting), to_json(&b.netting));
        prop_assert_eq!(to_json(&a.tfn), to_json(&b.tfn));
        prop_assert_eq!(
            to_json(&DecompositionView::from(&a.decomposition)),
            to_json(&DecompositionView::from(&b.decomposition))
        );
    }

    #[test]
    fn stages_conserve_pair_totals(trades in book()) {
        let st = run_stages(trades, &SplitPolicy::default()).unwrap();
        let netted = pair_totals(&st.tfn.segments);
        prop_assert_eq!(netted.len(), st.netting.edges.len());
        for e in &st.netting.edges {
            prop_assert_eq!(netted[&(e.from.clone(), e.to.clone())], (e.qty, e.m2, e.m1));
        }
        prop_assert_eq!(st.decomposition.pair_totals(), netted);
    }

    #[test]
    fn structures_are_zero_sum_and_bt_nodes_balance(trades in book()) {
        let st = run_stages(trades, &SplitPolicy::default()).unwrap();
        prop_assert!(st.tfn.unbalanced_nodes().is_empty());
        for n in st.tfn.nodes.iter().filter(|n| n.role == Role::Bt) {
            let (i, o) = st.tfn.throughput(n);
            prop_assert_eq!(i, o);
        }
        for s in st.decomposition.structures() {
            let ob = net_obligations(s);
            prop_assert_eq!(ob.values().map(|o| o.t_net).sum::<i64>(), 0);
            prop_assert_eq!(ob.values().map(|o| o.m_net).sum::<Money>(), Money::ZERO);
        }
    }

    #[test]
    fn tfn_dump_reproduces_decomposition(trades in book()) {
        let a = run_stages(trades.clone(), &SplitPolicy::default()).unwrap();
        let policy = SplitPolicy::from_json(&to_json(&a.tfn)).unwrap();
        let b = run_stages(trades, &policy).unwrap();
        prop_assert_eq!(a.tfn, b.tfn);
        prop_assert_eq!(a.decomposition, b.decomposition);
    }

    #[test]
    fn csv_round_trip(trades in book()) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &trades).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), trades);
    }
}
