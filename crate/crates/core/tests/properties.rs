use proptest::prelude::*;

use sigma_core::checkpoint::{load_checkpoint, save_checkpoint};
use sigma_core::data::{pack_pretrain, Packer};
use sigma_core::inherit::{extract_submodel, inherit_model, merge_vocab, DonorModel, SubModelSpec, Vocab};
use sigma_core::model::{ArchMode, Model, ModelConfig};
use sigma_core::routing::{RoutingSpec, RoutingTable};
use sigma_core::sim::{expected_volume, place_experts, ClusterSpec, CommMode};

fn config(m: usize, n: usize, domains: usize, experts: usize, slots: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        dense_layers: m,
        rre_layers: n,
        heads: 2,
        hidden: 8,
        ffn: 12,
        vocab: 20,
        embedding_slots: slots,
        num_domains: domains,
        experts_per_domain: experts,
        max_seq_len: 10,
        domain_slots: (0..domains).map(|d| d % slots).collect(),
        init_seed: seed,
        routing_seed: seed.wrapping_add(1),
    }
}

fn tokens() -> impl Strategy<Value = Vec<u32>> {
    prop::collection::vec(0u32..20, 1..=10)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn routing_invariants(d in 1usize..5, l in 1usize..4, e in 1usize..9, extra in 0usize..200, seed: u64) {
        let v = e + extra;
        let table = RoutingTable::build(RoutingSpec::new(d, l, e, v).with_seed(seed)).unwrap();
        for i in 0..d {
            for j in 0..l {
                let hist = table.load_histogram(i, j).unwrap();
                prop_assert!(hist.iter().max().unwrap() - hist.iter().min().unwrap() <= 1);
                for t in 0..v {
                    let x = table.route(i, j, t).unwrap();
                    prop_assert!(x >= i * e && x < (i + 1) * e);
                }
            }
        }
        let mut bytes = Vec::new();
        table.write_to(&mut bytes).unwrap();
        prop_assert_eq!(RoutingTable::decode(&bytes).unwrap(), table);
    }

    #[test]
    fn extraction_matches_full_model(
        m in 0usize..2, n in 1usize..3, domains in 1usize..4, experts in 1usize..4,
        slots in 1usize..3, seed: u64, toks in tokens(),
    ) {
        let model = Model::init(config(m, n, domains, experts, slots, seed)).unwrap();
        for domain in 0..domains {
            let sub = extract_submodel(&model, SubModelSpec { domain }).unwrap();
            prop_assert_eq!(sub.forward(0, &toks).unwrap(), model.forward(domain, &toks).unwrap());
        }
    }

    #[test]
    fn inheritance_matches_donor(
        m in 0usize..3, domains in 1usize..4, experts in 1usize..4, slots in 1usize..3,
        added in 0usize..6, seed: u64, toks in tokens(),
    ) {
        let layers = 3;
        let donor_config = config(layers, 0, 1, 1, 1, seed);
        let donor = DonorModel::new(Model::init(donor_config).unwrap(), Vocab::numbered(20)).unwrap();
        let addition = Vocab::new((18..18 + added).map(|i| format!("#{i}"))).unwrap();
        let merged = merge_vocab(&donor.vocab, &addition);
        let mut target = config(m, layers - m, domains, experts, slots, seed ^ 7);
        target.vocab = merged.len();
        let inherited = inherit_model(&donor, &merged, target, seed).unwrap();

        let reference = donor.model.forward(0, &toks).unwrap();
        for domain in 0..domains {
            let out = inherited.forward(domain, &toks).unwrap();
            for r in 0..reference.rows() {
                prop_assert_eq!(reference.row(r), &out.row(r)[..20]);
            }
        }
    }

    #[test]
    fn streaming_packer_matches_batch(
        docs in prop::collection::vec(prop::collection::vec(any::<u32>(), 0..30), 0..12),
        len in 1usize..17,
    ) {
        let batch = pack_pretrain(3, &docs, len).unwrap();
        let mut packer = Packer::new(3, len).unwrap();
        let mut streamed = Vec::new();
        for doc in &docs {
            packer.push(doc);
            streamed.extend(packer.drain());
        }
        let tail = packer.finish();
        streamed.extend(tail.instances);
        prop_assert_eq!(streamed, batch.instances);
        prop_assert_eq!(tail.dropped, batch.dropped);
    }
}

#[test]
fn mode_regimes() {
    assert_eq!(config(1, 2, 3, 2, 1, 0).mode(), ArchMode::Mixed);
    assert_eq!(config(0, 2, 3, 2, 1, 0).mode(), ArchMode::Sparse);
    assert_eq!(config(2, 0, 1, 1, 1, 0).mode(), ArchMode::Dense);
    assert_eq!(config(1, 2, 1, 1, 1, 0).mode(), ArchMode::Dense);
}

#[test]
fn checkpoint_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::init(config(1, 1, 2, 3, 2, 42)).unwrap();
    save_checkpoint(&model, dir.path()).unwrap();
    let back = load_checkpoint(dir.path()).unwrap();
    for domain in 0..2 {
        assert_eq!(
            back.forward(domain, &[3, 1, 4, 1, 5]).unwrap(),
            model.forward(domain, &[3, 1, 4, 1, 5]).unwrap()
        );
    }
    std::fs::write(dir.path().join("params.bin"), b"short").unwrap();
    assert!(load_checkpoint(dir.path()).is_err());
}

#[test]
fn grouped_volume_falls_with_more_groups() {
    for devices in [8usize, 16, 64] {
        let mut last = f64::INFINITY;
        for g in (1..=devices).filter(|g| devices % g == 0) {
            let c = ClusterSpec::new(devices, g, 4, 4).unwrap();
            let p = place_experts(&c, g, devices / g).unwrap();
            let hist = vec![64_000 / g as u64; g];
            let grouped = expected_volume(&c, &p, &hist, CommMode::Grouped).unwrap();
            let global = expected_volume(&c, &p, &hist, CommMode::Global).unwrap();
            assert!(grouped <= last);
            if g == 1 {
                assert_eq!(grouped, global);
            } else {
                assert!(grouped < global);
            }
            last = grouped;
        }
    }
}
