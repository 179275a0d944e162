use vfg::identify::{label_secondaries, IdentificationConfig, LabelKind};
use vfg::synth::{worked_example, world, World, WorldConfig};
use vfg::window::{assemble_samples, ReadingIndex};

fn check_recovery(w: &World) {
    let cfg = IdentificationConfig::default();
    let index = ReadingIndex::new(&w.readings);
    let labeling = label_secondaries(&w.crashes, &index, &cfg).unwrap();
    assert!(labeling.diagnostics.is_empty(), "seed {}: {:?}", w.config.seed, labeling.diagnostics);
    assert_eq!(labeling.count(LabelKind::Secondary), w.pairs.len(), "seed {}", w.config.seed);
    assert_eq!(labeling.count(LabelKind::Primary), w.pairs.len(), "seed {}", w.config.seed);
    for pair in &w.pairs {
        let s = labeling.get(&pair.secondary_id).unwrap();
        assert_eq!(s.label, LabelKind::Secondary);
        assert_eq!(s.primary_id.as_deref(), Some(pair.primary_id.as_str()));
        assert!((s.time_gap_h.unwrap() - pair.time_gap_min as f64 / 60.0).abs() < 1e-12);
        assert!((s.dist_gap_mi.unwrap() - pair.dist_gap_mi).abs() < 1e-12);
        assert_eq!(labeling.get(&pair.primary_id).unwrap().label, LabelKind::Primary);
        let inv = labeling.investigations.iter().find(|i| i.crash_id == pair.primary_id).unwrap();
        assert_eq!(inv.region.cells, World::planted_cells(pair), "seed {} pair {}", w.config.seed, pair.primary_id);
    }
}

#[test]
fn planted_secondaries_recovered_across_twenty_seeds() {
    for seed in 0..20 {
        check_recovery(&world(&WorldConfig { seed, ..WorldConfig::default() }).unwrap());
    }
}

#[test]
fn three_planted_pairs_among_two_hundred_crashes() {
    let w = world(&WorldConfig::default()).unwrap();
    assert_eq!(w.crashes.len(), 200);
    check_recovery(&w);
}

#[test]
fn worked_example_is_confirmed_secondary() {
    let w = worked_example();
    check_recovery(&w);
    let index = ReadingIndex::new(&w.readings);
    let labeling = label_secondaries(&w.crashes, &index, &IdentificationConfig::default()).unwrap();
    let s = labeling.get("WA-0417-2").unwrap();
    assert_eq!(s.primary_id.as_deref(), Some("WA-0417-1"));
    assert!((s.time_gap_h.unwrap() * 60.0 - 25.0).abs() < 1e-9);
    assert!((s.dist_gap_mi.unwrap() - 0.66).abs() < 1e-9);
}

#[test]
fn no_slowdown_means_no_secondaries() {
    let w = world(&WorldConfig { planted_pairs: 0, ordinary_crashes: 150, seed: 7, ..WorldConfig::default() }).unwrap();
    let index = ReadingIndex::new(&w.readings);
    let labeling = label_secondaries(&w.crashes, &index, &IdentificationConfig::default()).unwrap();
    assert_eq!(labeling.count(LabelKind::Secondary), 0);
    assert!(labeling.investigations.iter().all(|i| i.region.is_empty()));
}

#[test]
fn raising_the_threshold_never_grows_regions() {
    let w = world(&WorldConfig { seed: 3, ..WorldConfig::default() }).unwrap();
    let index = ReadingIndex::new(&w.readings);
    let regions = |deficit_mph: f64| {
        let cfg = IdentificationConfig { deficit_mph, ..IdentificationConfig::default() };
        label_secondaries(&w.crashes, &index, &cfg).unwrap().investigations
    };
    let (low, high) = (regions(8.0), regions(15.0));
    for h in &high {
        let l = low.iter().find(|l| l.crash_id == h.crash_id).unwrap();
        assert!(h.region.cells.is_subset(&l.region.cells));
    }
}

#[test]
fn assembled_samples_follow_the_labels() {
    let w = world(&WorldConfig { seed: 11, ..WorldConfig::default() }).unwrap();
    let index = ReadingIndex::new(&w.readings);
    let labeling = label_secondaries(&w.crashes, &index, &IdentificationConfig::default()).unwrap();
    let untrimmed = assemble_samples(&w.crashes, &labeling.labels, &index, false).unwrap();
    assert!(untrimmed.rejected.is_empty(), "{:?}", untrimmed.rejected);
    assert_eq!(untrimmed.samples.len(), w.crashes.len() - w.pairs.len());
    for pair in &w.pairs {
        let s = untrimmed.samples.iter().find(|s| s.id == pair.secondary_id).unwrap();
        assert!(s.is_secondary);
        assert_eq!(s.crash_id, pair.primary_id);
        assert_eq!(s.length, 6 + (pair.time_gap_min / 5) as usize);
    }
    let trimmed = assemble_samples(&w.crashes, &labeling.labels, &index, true).unwrap();
    assert!(trimmed.samples.iter().all(|s| s.length == 6));
}
