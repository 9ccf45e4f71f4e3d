use indoornav_core::decision::{arbitrate, CommandSource, NavCommand};
use indoornav_core::shield::{
    apply_envelope, breach_stats, reflex_check, BreachTracker, Direction, EnvelopeConfig, TofFrame,
};
use proptest::prelude::*;

fn frame(raw: [f64; 6]) -> TofFrame {
    TofFrame::from_raw(raw, 0, &EnvelopeConfig::default())
}

fn raw_reading() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => 0.0..4500.0f64,
        1 => Just(65535.0),
        1 => 240.0..260.0f64,
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn envelope_is_monotone(
        a in prop::array::uniform6(0.0..4000.0f64),
        bump in prop::array::uniform6(0.0..1000.0f64),
    ) {
        let cfg = EnvelopeConfig::default();
        let mut b = a;
        for i in 0..6 {
            b[i] += bump[i];
        }
        let ea = apply_envelope(&frame(a), &cfg);
        let eb = apply_envelope(&frame(b), &cfg);
        for i in 0..6 {
            prop_assert!(eb.adjusted[i] >= ea.adjusted[i]);
            prop_assert!(ea.adjusted[i] >= 0.0);
        }
    }

    #[test]
    fn breach_count_ignores_chunking(
        log in prop::collection::vec(prop::array::uniform6(raw_reading()), 0..60),
        cuts in prop::collection::vec(0usize..60, 0..6),
    ) {
        let cfg = EnvelopeConfig::default();
        let frames: Vec<TofFrame> = log.iter().map(|r| frame(*r)).collect();
        let (batch, _) = breach_stats(&frames, &cfg);

        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(frames.len())).collect();
        cuts.push(0);
        cuts.push(frames.len());
        cuts.sort();
        let mut tracker = BreachTracker::new();
        for w in cuts.windows(2) {
            for f in &frames[w[0]..w[1]] {
                tracker.push(f, &cfg);
            }
        }
        let streamed = tracker.stats();
        prop_assert_eq!(streamed.breach_count, batch.breach_count);
        prop_assert_eq!(streamed.per_direction, batch.per_direction);
        prop_assert_eq!(streamed.samples, batch.samples);
    }

    #[test]
    fn arbitration_always_honours_reflex(
        r in prop::array::uniform3(-1.0..1.0f64),
        c in prop::array::uniform4(-1.0..1.0f64),
        present in any::<bool>(),
    ) {
        let reflex = present.then(|| NavCommand {
            source: CommandSource::Reflex,
            ..NavCommand::new(r[0], r[1], r[2], 0.0)
        });
        let reasoner = NavCommand::new(c[0], c[1], c[2], c[3] * 180.0);
        let out = arbitrate(reflex, reasoner);
        match reflex {
            Some(r) => prop_assert_eq!(&out, &r),
            None => prop_assert_eq!(&out, &reasoner),
        }
        prop_assert_eq!(arbitrate(reflex, out), out);
    }
}

/// Every direction swept across the threshold, the others parked at
/// assorted values on both sides of it.
#[test]
fn reflex_fires_iff_min_adjusted_at_most_threshold() {
    let cfg = EnvelopeConfig::default();
    let probe: Vec<f64> = (0..=80).map(|i| i as f64 * 0.5).collect();
    let others = [0.0, 29.5, 30.0, 30.5, 31.0, 100.0, 4000.0];
    let mut checked = 0usize;
    for d in Direction::ALL {
        for &p in &probe {
            for &o in &others {
                for k in 0..6 {
                    // Raw values that land exactly on the intended adjusted ones.
                    let mut raw = [0.0; 6];
                    for i in 0..6 {
                        let adj = if i == d.index() {
                            p
                        } else if i == k {
                            o
                        } else {
                            4000.0
                        };
                        raw[i] = (adj + cfg.offsets[i]).min(cfg.max_range_mm);
                    }
                    let env = apply_envelope(&frame(raw), &cfg);
                    let min = env.adjusted.iter().cloned().fold(f64::INFINITY, f64::min);
                    let fired = reflex_check(&env, &cfg);
                    assert_eq!(
                        fired.is_some(),
                        min <= cfg.reflex_threshold_mm,
                        "adjusted {:?}",
                        env.adjusted
                    );
                    if let Some(cmd) = fired {
                        assert_eq!(cmd.source, CommandSource::Reflex);
                    }
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 6 * 81 * 7 * 6);
}

#[test]
fn reflex_moves_away_from_the_closest_side() {
    let cfg = EnvelopeConfig::default();
    // Up at 20 after the 100 mm offset.
    let env = apply_envelope(
        &frame([4000.0, 4000.0, 4000.0, 4000.0, 120.0, 4000.0]),
        &cfg,
    );
    let cmd = reflex_check(&env, &cfg).unwrap();
    assert!(cmd.vz < 0.0 && cmd.vx == 0.0 && cmd.vy == 0.0);

    // Front 10 beats left 25: back away.
    let env = apply_envelope(&frame([260.0, 4000.0, 4000.0, 275.0, 4000.0, 4000.0]), &cfg);
    let cmd = reflex_check(&env, &cfg).unwrap();
    assert!(cmd.vx < 0.0 && cmd.vy == 0.0);
}
