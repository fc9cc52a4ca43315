//! Property tests over the library invariants: binning partitions, ECE
//! bounds, sample-size round trips, targeting direction laws, calibrator
//! shape guarantees, and assembly size laws.

use proptest::prelude::*;

use calib_core::bounds::{accuracy_uncertainty, decomposition_check, min_sample_size};
use calib_core::calibrate::{
    apply_isotonic, apply_temperature, fit_isotonic, Temperature,
};
use calib_core::metrics::{accuracy, conf_gap, ece, Bin};
use calib_core::targeting::{
    assemble, classify_bin, target_probability, AssemblyMode, GenerationSpec, Quadrant,
    TrainingItem,
};
use calib_core::{bin_records, BinningConfig, DiagramMode, PredictionRecord, ReliabilityDiagram};

fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..120).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (score, pos))| {
                PredictionRecord::new(format!("r{i}"), score, if pos { "yes" } else { "no" })
            })
            .collect()
    })
}

fn config(num_bins: usize, mode: DiagramMode) -> BinningConfig {
    BinningConfig::new(num_bins, mode)
        .unwrap()
        .with_positive_label("yes")
}

/// A diagram with the given per-bin (count, confidence in its bin, accuracy).
fn diagram_from(cells: &[(usize, f64, f64)]) -> ReliabilityDiagram {
    let m = cells.len();
    let bins: Vec<Bin> = cells
        .iter()
        .enumerate()
        .map(|(i, &(count, conf_frac, acc))| {
            let lower = i as f64 / m as f64;
            let upper = (i + 1) as f64 / m as f64;
            let confidence = lower + conf_frac.max(1e-9) * (upper - lower);
            Bin {
                index: i + 1,
                lower,
                upper,
                count,
                weight: 0.0,
                confidence,
                accuracy: acc,
                gap: 0.0,
            }
        })
        .collect();
    let n = cells.iter().map(|c| c.0).sum();
    ReliabilityDiagram::from_bins(bins, n).unwrap()
}

fn arb_cells(min_total: usize) -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
    (2usize..=10)
        .prop_flat_map(|m| prop::collection::vec((0usize..40, 0.0f64..=1.0, 0.0f64..=1.0), m))
        .prop_filter("need at least one occupied bin", move |cells| {
            cells.iter().map(|c| c.0).sum::<usize>() >= min_total
        })
}

proptest! {
    #[test]
    fn binning_partitions_and_bounds_ece(records in arb_records(), m in 2usize..=12,
                                         maxprob in any::<bool>()) {
        let mode = if maxprob { DiagramMode::MaxProb } else { DiagramMode::Score };
        let diagram = bin_records(&records, &config(m, mode)).unwrap();
        prop_assert_eq!(diagram.bins.iter().map(|b| b.count).sum::<usize>(), records.len());
        prop_assert!((diagram.bins.iter().map(|b| b.weight).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&diagram.ece));
        prop_assert!((ece(&diagram) - diagram.ece).abs() < 1e-15);
        for bin in &diagram.bins {
            if bin.count > 0 {
                prop_assert!(bin.confidence >= bin.lower - 1e-12 && bin.confidence <= bin.upper + 1e-12);
            }
            prop_assert!((bin.gap - (bin.accuracy - bin.confidence)).abs() < 1e-15);
        }
    }

    #[test]
    fn binning_is_permutation_stable(records in arb_records(), m in 2usize..=10, rot in 0usize..120) {
        let cfg = config(m, DiagramMode::Score);
        let base = bin_records(&records, &cfg).unwrap();
        let mut shuffled = records.clone();
        shuffled.rotate_left(rot % records.len().max(1));
        shuffled.reverse();
        let other = bin_records(&shuffled, &cfg).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn maxprob_identity_holds(records in arb_records(), m in 2usize..=10) {
        let diagram = bin_records(&records, &config(m, DiagramMode::MaxProb)).unwrap();
        let direct = accuracy(&records, "yes").unwrap();
        prop_assert!((diagram.data_accuracy - direct).abs() < 1e-12);
    }

    #[test]
    fn sample_size_round_trip(epsilon in 0.01f64..0.5, delta in 0.001f64..0.999) {
        let n = min_sample_size(epsilon, delta).unwrap();
        prop_assert!(n >= 1);
        prop_assert!(accuracy_uncertainty(epsilon, n).unwrap() <= delta * (1.0 + 1e-12));
        if n > 1 {
            prop_assert!(accuracy_uncertainty(epsilon, n - 1).unwrap() > delta * (1.0 - 1e-9));
        }
    }

    #[test]
    fn decomposition_inequality_on_matched_pairs(
        cells in arb_cells(1),
        perturb in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 10),
    ) {
        let a = diagram_from(&cells);
        let moved: Vec<(usize, f64, f64)> = cells
            .iter()
            .enumerate()
            .map(|(i, &(count, _, _))| {
                let (c, acc) = perturb[i % perturb.len()];
                (count, c, acc)
            })
            .collect();
        let b = diagram_from(&moved);
        let report = decomposition_check(&a, &b).unwrap();
        prop_assert!(report.holds, "lhs {} rhs {}", report.lhs, report.rhs);
        let sym = decomposition_check(&b, &a).unwrap();
        prop_assert!(sym.holds);
        // conf_gap is one of the two rhs terms, so it can never exceed rhs
        let cg = conf_gap(&a, &b).unwrap();
        prop_assert!(cg <= report.rhs + 1e-12);
        prop_assert!((cg - conf_gap(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn target_probability_direction_law(conf in 0.0f64..=1.0, alpha in 0.0f64..=1.0,
                                        low in any::<bool>(), over in any::<bool>()) {
        let quadrant = match (low, over) {
            (true, true) => Quadrant::LowOver,
            (true, false) => Quadrant::LowUnder,
            (false, true) => Quadrant::HighOver,
            (false, false) => Quadrant::HighUnder,
        };
        let target = target_probability(conf, quadrant, alpha);
        prop_assert!((0.01..=0.99).contains(&target));
        if quadrant.is_over() {
            prop_assert!(target <= conf.max(0.01) + 1e-15);
        } else {
            prop_assert!(target >= conf.min(0.99) - 1e-15);
        }
    }

    #[test]
    fn target_probability_is_lipschitz_in_alpha(conf in 0.0f64..=1.0,
                                                a1 in 0.0f64..=1.0, a2 in 0.0f64..=1.0) {
        for quadrant in [Quadrant::LowOver, Quadrant::HighUnder] {
            let t1 = target_probability(conf, quadrant, a1);
            let t2 = target_probability(conf, quadrant, a2);
            prop_assert!((t1 - t2).abs() <= (a1 - a2).abs() + 1e-15);
        }
    }

    #[test]
    fn classify_bin_agrees_with_the_axes(count in 1usize..50, conf_frac in 0.0f64..=1.0,
                                         acc in 0.0f64..=1.0, m_pick in 0usize..3) {
        let m = [2, 5, 10][m_pick];
        let mut cells = vec![(0usize, 0.5f64, 0.0f64); m];
        let slot = (conf_frac * (m as f64 - 1.0)).round() as usize;
        cells[slot] = (count, conf_frac, acc);
        let diagram = diagram_from(&cells);
        let bin = &diagram.bins[slot];
        match classify_bin(bin) {
            Ok(q) => {
                prop_assert_eq!(q.is_low(), bin.confidence <= 0.5);
                prop_assert_eq!(q.is_over(), bin.gap < 0.0);
            }
            Err(e) => {
                prop_assert!(bin.gap == 0.0, "unexpected error {e} for gap {}", bin.gap);
            }
        }
    }

    #[test]
    fn isotonic_fit_is_monotone_and_mean_preserving(
        raw in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..60),
        probe in 0.0f64..=1.0,
    ) {
        let pairs: Vec<(f64, f64)> = raw
            .iter()
            .map(|&(s, y)| (s, if y { 1.0 } else { 0.0 }))
            .collect();
        let map = fit_isotonic(&pairs).unwrap();
        prop_assert!(map.breakpoints.windows(2).all(|w| w[0].0 < w[1].0));
        prop_assert!(map.breakpoints.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert!(map.breakpoints.iter().all(|&(_, v)| (0.0..=1.0).contains(&v)));

        // PAVA preserves the total: weighted fitted values sum to the outcomes
        let fitted_sum: f64 = pairs.iter().map(|&(s, _)| apply_isotonic(&map, s)).sum();
        let outcome_sum: f64 = pairs.iter().map(|&(_, y)| y).sum();
        prop_assert!((fitted_sum - outcome_sum).abs() < 1e-9 * pairs.len() as f64 + 1e-9);

        let lo = map.breakpoints.first().unwrap().1;
        let hi = map.breakpoints.last().unwrap().1;
        let out = apply_isotonic(&map, probe);
        prop_assert!(out >= lo - 1e-15 && out <= hi + 1e-15);
    }

    #[test]
    fn temperature_preserves_argmax(t in 0.05f64..=20.0, s in 0.0f64..=1.0) {
        let temp = Temperature::new(t).unwrap();
        let out = apply_temperature(&temp, s);
        prop_assert!((0.0..=1.0).contains(&out));
        if s > 0.5 {
            prop_assert!(out > 0.5 - 1e-15);
        } else if s < 0.5 {
            prop_assert!(out < 0.5 + 1e-15);
        }
    }

    #[test]
    fn assembly_size_laws(n in 1usize..60, take in 1usize..20, deliver in 0usize..30) {
        let take = take.min(n);
        let original: Vec<TrainingItem> = (0..n)
            .map(|i| TrainingItem {
                id: format!("id{i}"),
                text: format!("text {i}"),
                label: if i % 2 == 0 { "yes" } else { "no" }.to_string(),
            })
            .collect();
        let exemplars: Vec<PredictionRecord> = (0..take)
            .map(|i| PredictionRecord::new(format!("id{i}"), 0.75, "yes").with_text(format!("text {i}")))
            .collect();
        let spec = GenerationSpec {
            bin_index: 8,
            quadrant: Quadrant::HighOver,
            alpha: 0.1,
            source_confidence: 0.75,
            dominant_class: "yes".to_string(),
            target_primary_pct: 65,
            target_secondary_pct: 35,
            sample_count: take,
            exemplars,
        };
        let synthetic: Vec<TrainingItem> = (0..deliver)
            .map(|i| TrainingItem {
                id: format!("syn{i}"),
                text: format!("synthetic {i}"),
                label: "yes".to_string(),
            })
            .collect();

        let replaced = assemble(&original, &[synthetic.clone()], &[spec.clone()],
                                AssemblyMode::Synthesis, false).unwrap();
        prop_assert_eq!(replaced.len(), n - take + deliver);
        let exemplar_ids: Vec<String> = (0..take).map(|i| format!("id{i}")).collect();
        let no_exemplars_left = replaced.iter().all(|item| !exemplar_ids.contains(&item.id));
        prop_assert!(no_exemplars_left);

        let appended = assemble(&original, &[synthetic.clone()], &[spec.clone()],
                                AssemblyMode::SynthesisPlus, false).unwrap();
        prop_assert_eq!(appended.len(), n + deliver);

        let strict = assemble(&original, &[synthetic], &[spec], AssemblyMode::Synthesis, true);
        if deliver == take {
            prop_assert!(strict.is_ok());
        } else {
            prop_assert!(strict.is_err());
        }
    }
}
