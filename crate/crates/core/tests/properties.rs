//! Property tests over random small relations.

use std::collections::BTreeSet;

use fpguard::attacks::{atk_col, atk_rnd, atk_row, ColumnAttack};
use fpguard::bounds::{misattribution_bound, misdiagnosis_bound};
use fpguard::correlations::{
    joint_distributions, kmeans_communities, stat_relations, CommunityAssignment, JointDistributionSet, StatRelationSet,
};
use fpguard::defenses::{dfs_col, dfs_row, ColumnDefenseConfig};
use fpguard::fingerprint::{extract, insert, FingerprintCode, FingerprintKey, MarkedPosition};
use fpguard::metrics::{accuracy, accusable_rank, matches_partial, num_cmp_partial, p_col, p_row, Rank};
use fpguard::relation::{flip_lsb, AttributeSpec, PrimaryKey, Relation, SchemaFile};
use fpguard::transport::{TransportPlan, plan_entropy, sample_edit_plan, sinkhorn, sinkhorn_traced, transport_cost, CostMatrix, SinkhornOptions};
use proptest::prelude::*;

fn build(cards: &[u32], rows: Vec<Vec<u32>>) -> Relation {
    let schema = cards
        .iter()
        .enumerate()
        .map(|(i, &k)| AttributeSpec::categorical(format!("a{i}"), k))
        .collect();
    let keys = (0..rows.len() as u64).map(|i| PrimaryKey::Int(i * 7 + 3)).collect();
    Relation::new(schema, keys, rows).unwrap()
}

/// Relations with 2..=4 attributes of cardinality 2..=6 and `rows` records.
fn relation(rows: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Relation> {
    (prop::collection::vec(2u32..=6, 2..=4), rows).prop_flat_map(|(cards, m)| {
        let row = cards.iter().map(|&k| 0..k).collect::<Vec<_>>();
        prop::collection::vec(row, m).prop_map(move |rows| build(&cards, rows))
    })
}

/// A relation, a perturbed copy of the same shape, and a seed.
fn relation_pair(rows: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Relation, Relation, u64)> {
    (relation(rows), any::<u64>(), 0.0..0.4f64).prop_map(|(r, seed, frac)| {
        let (copy, _) = atk_rnd(&r, frac, seed).unwrap();
        (r, copy, seed)
    })
}

fn in_domain(r: &Relation) -> bool {
    r.rows().all(|row| row.iter().enumerate().all(|(p, &v)| v < r.cardinality(p)))
}

fn same_frame(a: &Relation, b: &Relation) -> bool {
    a.keys() == b.keys() && a.schema() == b.schema() && a.n_rows() == b.n_rows()
}

fn comm_for(r: &Relation, seed: u64) -> CommunityAssignment {
    let c = (r.n_rows() / 4).clamp(1, 3);
    kmeans_communities(r, c, seed).unwrap()
}

fn marked_cells(marked: &[MarkedPosition]) -> BTreeSet<(usize, usize)> {
    marked.iter().map(|m| (m.row_index, m.attribute_index)).collect()
}

fn code(bits: Vec<bool>) -> FingerprintCode {
    FingerprintCode::from_bits(bits)
}

fn distribution(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    })
}

fn marginal_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|k| (distribution(k), distribution(k)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---- relation

    #[test]
    fn lsb_flip_in_domain_and_involutive(k in 2u32..=64, v in 0u32..64) {
        let v = v % k;
        let once = flip_lsb(v, k).unwrap();
        prop_assert!(once < k);
        prop_assert_ne!(once, v);
        if (v ^ 1) < k && (once ^ 1) < k {
            prop_assert_eq!(flip_lsb(once, k).unwrap(), v);
        }
    }

    #[test]
    fn coded_csv_roundtrip(r in relation(0..=12)) {
        let schema = SchemaFile::for_relation("id", &r);
        let text = r.to_csv("id");
        let back = Relation::from_csv(&text, &schema).unwrap();
        prop_assert_eq!(back, r);
    }

    // ---- fingerprint

    #[test]
    fn insertion_touches_only_level_bits(r in relation(1..=40), serial in 0u64..100, gamma_inv in 1u64..=3, k in 1u32..=3) {
        let key = FingerprintKey::new(b"prop".to_vec(), serial, gamma_inv, 16).with_bit_level(k);
        let ins = insert(&r, &key).unwrap();
        prop_assert!(in_domain(&ins.relation));
        let marked = marked_cells(&ins.marked);
        for (i, p) in r.diff_positions(&ins.relation).unwrap() {
            prop_assert!(marked.contains(&(i, p)));
            let (old, new) = (r.get(i, p), ins.relation.get(i, p));
            let x = old ^ new;
            let single = x == 1 << (k - 1);
            // The domain-safe fallback lands on the largest code with the wanted bit.
            let fallback = (new >> (k - 1)) & 1 == 1 && (new + 1..r.cardinality(p)).all(|c| (c >> (k - 1)) & 1 == 0);
            prop_assert!(single || fallback);
        }
    }

    #[test]
    fn extraction_ignores_record_order(r in relation(1..=40), serial in 0u64..100, shift in 0usize..40) {
        let key = FingerprintKey::new(b"prop".to_vec(), serial, 2, 8);
        let fp = insert(&r, &key).unwrap().relation;
        let m = fp.n_rows();
        let order: Vec<usize> = (0..m).map(|i| (i + shift) % m).rev().collect();
        let rows = order.iter().map(|&i| fp.row(i).to_vec()).collect();
        let keys = order.iter().map(|&i| fp.keys()[i].clone()).collect();
        let permuted = Relation::new(fp.schema().to_vec(), keys, rows).unwrap();
        prop_assert_eq!(extract(&fp, &key).unwrap(), extract(&permuted, &key).unwrap());
    }

    #[test]
    fn code_hex_roundtrip(bits in prop::collection::vec(any::<bool>(), 1..300)) {
        let c = code(bits);
        prop_assert_eq!(FingerprintCode::from_hex(&c.to_hex(), c.len()).unwrap(), c);
    }

    // ---- correlations

    #[test]
    fn joints_normalized_and_symmetric((_, copy, _) in relation_pair(1..=30)) {
        let j = joint_distributions(&copy);
        let n = copy.n_attrs();
        for p in 0..n {
            for q in 0..n {
                if p == q { continue; }
                let total: f64 = j.oriented(p, q).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
                for a in 0..copy.cardinality(p) {
                    for b in 0..copy.cardinality(q) {
                        prop_assert_eq!(j.get(p, q, a, b), j.get(q, p, b, a));
                    }
                }
            }
        }
    }

    #[test]
    fn joint_lipschitz_under_single_edit(r in relation(1..=30), row in any::<prop::sample::Index>(), attr in any::<prop::sample::Index>(), val in 0u32..6) {
        let i = row.index(r.n_rows());
        let p = attr.index(r.n_attrs());
        let mut e = r.clone();
        e.set(i, p, val % r.cardinality(p)).unwrap();
        let (a, b) = (joint_distributions(&r), joint_distributions(&e));
        let m = r.n_rows() as f64;
        for q in 0..r.n_attrs() {
            if q == p { continue; }
            let touched = usize::from(r.get(i, p) != e.get(i, p)) as f64;
            prop_assert!(a.frobenius_gap(&b, p, q) <= 2.0 * touched / m + 1e-12);
        }
    }

    #[test]
    fn similarities_ignore_attribute_order(r in relation(1..=20), seed in any::<u64>()) {
        let n = r.n_attrs();
        let perm: Vec<usize> = (0..n).rev().collect();
        let schema = perm.iter().map(|&p| r.schema()[p].clone()).collect();
        let rows = r.rows().map(|row| perm.iter().map(|&p| row[p]).collect()).collect();
        let swapped = Relation::new(schema, r.keys().to_vec(), rows).unwrap();
        let comm = comm_for(&r, seed);
        prop_assert_eq!(stat_relations(&r, &comm).unwrap(), stat_relations(&swapped, &comm).unwrap());
    }

    #[test]
    fn kmeans_reproducible(r in relation(1..=30), seed in any::<u64>()) {
        let c = r.n_rows().min(3);
        prop_assert_eq!(kmeans_communities(&r, c, seed).unwrap(), kmeans_communities(&r, c, seed).unwrap());
    }

    #[test]
    fn priors_json_roundtrip((r, _, seed) in relation_pair(1..=20)) {
        let j = joint_distributions(&r);
        let back = JointDistributionSet::from_json(&j.to_json()).unwrap();
        for (p, q) in fpguard::correlations::pairs(r.n_attrs()) {
            prop_assert!(j.frobenius_gap(&back, p, q) < 1e-12);
        }
        let s = stat_relations(&r, &comm_for(&r, seed)).unwrap();
        let back = StatRelationSet::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back.communities.len(), s.communities.len());
        for (a, b) in s.communities.iter().zip(&back.communities) {
            prop_assert_eq!(&a.members, &b.members);
            for i in 0..a.len() {
                for j in i + 1..a.len() {
                    prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-12);
                }
            }
        }
    }

    // ---- attacks

    #[test]
    fn attacks_keep_relations_valid((r, copy, seed) in relation_pair(1..=30), tau in 0.01f64..0.3, rounds in 1usize..4) {
        let prior = joint_distributions(&r);
        let (col, rep) = atk_col(&copy, &prior, tau, rounds, seed).unwrap();
        prop_assert!(in_domain(&col) && same_frame(&col, &copy));
        prop_assert!(rep.rounds_executed <= rounds);
        let comm = comm_for(&r, seed);
        let s = stat_relations(&r, &comm).unwrap();
        let (row, rep) = atk_row(&copy, &s, &comm, tau * 10.0).unwrap();
        prop_assert!(in_domain(&row) && same_frame(&row, &copy));
        let cells = (copy.n_rows() * copy.n_attrs()) as f64;
        prop_assert!((rep.per_chg - rep.changed_positions.len() as f64 / cells).abs() < 1e-12);
    }

    #[test]
    fn column_attack_never_reflips((r, copy, seed) in relation_pair(2..=30), tau in 0.01f64..0.2) {
        let prior = joint_distributions(&r);
        let mut attack = ColumnAttack::new(&copy, &prior, tau, seed).unwrap();
        let mut seen: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut before = copy.clone();
        while attack.step().is_some() {
            let now = attack.relation().clone();
            let changed: BTreeSet<_> = before.diff_positions(&now).unwrap().into_iter().collect();
            prop_assert!(changed.is_disjoint(&seen));
            seen.extend(changed);
            before = now;
            prop_assert!(attack.rounds_executed() <= r.n_rows() * r.n_attrs() + 1);
        }
        // Every cell differs from the start by exactly one flip.
        for (i, p) in copy.diff_positions(attack.relation()).unwrap() {
            prop_assert_eq!(attack.relation().get(i, p), flip_lsb(copy.get(i, p), copy.cardinality(p)).unwrap());
        }
    }

    #[test]
    fn random_attack_reproducible(r in relation(1..=30), frac in 0.0f64..1.0, seed in any::<u64>()) {
        let a = atk_rnd(&r, frac, seed).unwrap();
        let b = atk_rnd(&r, frac, seed).unwrap();
        prop_assert_eq!(&a.0, &b.0);
        prop_assert!(in_domain(&a.0));
        prop_assert_eq!(a.1.changed_positions, b.1.changed_positions);
    }

    // ---- transport

    #[test]
    fn sinkhorn_marginals_and_residual_trace((mu, nu) in marginal_pair(), lambda in 0.5f64..50.0) {
        let cost = CostMatrix::abs_diff(mu.len(), 1.0);
        let mut trace = Vec::new();
        let plan = sinkhorn_traced(&mu, &nu, &cost, lambda, &SinkhornOptions::default(), Some(&mut trace)).unwrap();
        prop_assert!(plan.g.iter().all(|&x| x >= 0.0));
        for (a, b) in plan.row_sums().iter().zip(&mu) { prop_assert!((a - b).abs() < 1e-8); }
        for (a, b) in plan.col_sums().iter().zip(&nu) { prop_assert!((a - b).abs() < 1e-8); }
        for w in trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-15, "residual rose {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn sinkhorn_sharper_is_cheaper((mu, nu) in marginal_pair(), l1 in 0.5f64..20.0, gap in 0.5f64..20.0) {
        let cost = CostMatrix::abs_diff(mu.len(), 1.0);
        let opts = SinkhornOptions::default();
        let a = sinkhorn(&mu, &nu, &cost, l1, &opts).unwrap();
        let b = sinkhorn(&mu, &nu, &cost, l1 + gap, &opts).unwrap();
        // Plans are only accurate to the solver tolerance.
        prop_assert!(plan_entropy(&a.g) >= plan_entropy(&b.g) - 1e-6);
        prop_assert!(transport_cost(&b.g, &cost).unwrap() <= transport_cost(&a.g, &cost).unwrap() + 1e-7);
    }

    #[test]
    fn edit_plan_spares_excluded(r in relation(1..=40), w in prop::collection::vec(0.0f64..1.0, 6), seed in any::<u64>(), mask in prop::collection::vec(any::<bool>(), 40)) {
        let col = r.column(0);
        let k = r.cardinality(0) as usize;
        let mut mu = vec![0.0; k];
        for &v in &col { mu[v as usize] += 1.0 / col.len() as f64; }
        let total: f64 = w[..k].iter().sum::<f64>() + 1e-9;
        let nu: Vec<f64> = w[..k].iter().map(|x| (x + 1e-9 / k as f64) / total).collect();
        // The independent coupling of the two marginals is a valid plan.
        let g = (0..k * k).map(|i| mu[i / k] * nu[i % k]).collect();
        let plan = TransportPlan { k, g, mu, nu, residual: 0.0, iterations: 0 };
        let excluded = &mask[..col.len()];
        let edits = sample_edit_plan(&plan, &col, excluded, seed).unwrap();
        let rows: BTreeSet<usize> = edits.edits.iter().map(|e| e.0).collect();
        prop_assert_eq!(rows.len(), edits.edits.len());
        for (row, v) in edits.edits {
            prop_assert!(!excluded[row]);
            prop_assert!((v as usize) < k && v != col[row]);
        }
    }

    // ---- defenses

    #[test]
    fn defenses_spare_fingerprinted_cells((r, _, seed) in relation_pair(2..=40), gamma_inv in 1u64..=4) {
        let key = FingerprintKey::new(b"prop".to_vec(), seed % 50, gamma_inv, 8);
        let ins = insert(&r, &key).unwrap();
        let marked = marked_cells(&ins.marked);
        let comm = comm_for(&r, seed);
        let s = stat_relations(&r, &comm).unwrap();
        let gamma = 1.0 / gamma_inv as f64;
        let (row_out, rep) = dfs_row(&ins.relation, &s, &comm, gamma, &ins.marked).unwrap();
        let touched: BTreeSet<usize> = rep.changed_positions.iter().map(|c| c.0).collect();
        let budget: usize = comm.sizes().iter().map(|&n| (n as f64 * gamma).ceil() as usize).sum();
        prop_assert!(touched.len() <= budget);
        let marked_rows: BTreeSet<usize> = marked.iter().map(|c| c.0).collect();
        prop_assert!(touched.is_disjoint(&marked_rows));
        prop_assert!(in_domain(&row_out));

        let cfg = ColumnDefenseConfig::uniform(r.n_attrs(), 20.0, seed);
        let (col_out, rep) = dfs_col(&ins.relation, &joint_distributions(&r), &ins.marked, &cfg).unwrap();
        for c in &rep.changed_positions {
            prop_assert!(!marked.contains(c));
        }
        for a in &rep.attributes {
            prop_assert!(a.l1_after <= a.l1_before + 1e-12, "attribute {} L1 {} -> {}", a.attribute, a.l1_before, a.l1_after);
        }
        prop_assert!(in_domain(&col_out));
    }

    // ---- metrics

    #[test]
    fn utility_is_one_on_identity(r in relation(1..=30), seed in any::<u64>(), tau in 1e-6f64..1.0) {
        let comm = comm_for(&r, seed);
        prop_assert_eq!(accuracy(&r, &r).unwrap(), 1.0);
        prop_assert_eq!(p_col(&r, &r, tau).unwrap(), 1.0);
        prop_assert_eq!(p_row(&r, &r, &comm, tau).unwrap(), 1.0);
    }

    #[test]
    fn utility_monotone_in_threshold((r, copy, seed) in relation_pair(2..=30), t1 in 1e-4f64..1.0, t2 in 1e-4f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let comm = comm_for(&r, seed);
        prop_assert!(p_col(&copy, &r, lo).unwrap() <= p_col(&copy, &r, hi).unwrap());
        prop_assert!(p_row(&copy, &r, &comm, lo * 5.0).unwrap() <= p_row(&copy, &r, &comm, hi * 5.0).unwrap());
        let acc = accuracy(&copy, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn compromised_plus_matching_is_length(f in prop::collection::vec(any::<bool>(), 1..200), seed in any::<u64>()) {
        let rec: Vec<Option<bool>> = f
            .iter()
            .enumerate()
            .map(|(i, &b)| match (seed.rotate_left(i as u32) ^ i as u64) % 3 { 0 => None, 1 => Some(!b), _ => Some(b) })
            .collect();
        let f = code(f);
        prop_assert_eq!(num_cmp_partial(&f, &rec).unwrap() + matches_partial(&f, &rec).unwrap(), f.len());
    }

    #[test]
    fn adding_innocents(extracted in prop::collection::vec(any::<bool>(), 16), malicious in prop::collection::vec(any::<bool>(), 16),
                        innocents in prop::collection::vec(prop::collection::vec(any::<bool>(), 16), 1..6),
                        extra in prop::collection::vec(any::<bool>(), 16)) {
        let (e, m) = (code(extracted), code(malicious));
        let inn: Vec<FingerprintCode> = innocents.into_iter().map(code).collect();
        let base = accusable_rank(&e, &m, &inn).unwrap();
        let x = code(extra);
        let mut more = inn.clone();
        more.push(x.clone());
        let after = accusable_rank(&e, &m, &more).unwrap();
        let m0 = 16 - e.hamming(&m);
        let mx = 16 - e.hamming(&x);
        if mx < m0 {
            prop_assert_eq!(base.rank.is_unique(), after.rank.is_unique());
        } else {
            prop_assert!(!after.rank.is_unique());
            if let (Rank::TopT(t0), Rank::TopT(t1)) = (base.rank, after.rank) {
                prop_assert!(t1 >= t0);
            }
        }
    }

    #[test]
    fn bounds_ordered(n in 1u64..1_000_000, l in 1u32..200) {
        prop_assert!(misattribution_bound(n, l) < misdiagnosis_bound(n, l));
    }
}
