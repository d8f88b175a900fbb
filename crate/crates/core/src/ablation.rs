//! Trains every model variant under one shared configuration and compares
//! them on a held-out set.

use crate::bench::{bench_steps, DEFAULT_WARMUPS};
use crate::data::{evaluate_pairs, ClipPair};
use crate::error::Result;
use crate::model::{ModelConfig, Variant};
use crate::training::{train, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub ms_per_frame: f64,
    pub psnr_db: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn psnr(&self, v: Variant) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == v).map(|r| r.psnr_db)
    }

    /// `full >= sliding_window >= baseline` and `full - baseline >= margin_db`.
    pub fn ordering_holds(&self, margin_db: f64) -> bool {
        match (
            self.psnr(Variant::Full),
            self.psnr(Variant::SlidingWindow),
            self.psnr(Variant::Baseline),
        ) {
            (Some(f), Some(s), Some(b)) => f >= s && s >= b && f - b >= margin_db,
            _ => false,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,variant,params,ms_per_frame,psnr_db,final_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.3},{:.4},{}\n",
                self.seed,
                r.variant.name(),
                r.params,
                r.ms_per_frame,
                r.psnr_db,
                r.final_loss
            ));
        }
        out
    }
}

/// `bench_runs == 0` skips latency measurement (reported as 0).
pub fn run_ablation(
    model: &ModelConfig,
    config: &TrainConfig,
    train_set: &[ClipPair],
    test_set: &[ClipPair],
    bench_runs: usize,
    on_progress: &mut dyn FnMut(Variant, usize, f64),
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for variant in [Variant::Baseline, Variant::SlidingWindow, Variant::Full] {
        let cfg = model.clone().with_variant(variant);
        let trained = train(&cfg, config, train_set, &mut |e| {
            if let crate::training::TrainEvent::Log(r) = e {
                on_progress(variant, r.iter, r.loss);
            }
            Ok(())
        })?;
        let report = evaluate_pairs(&trained.params, test_set)?;
        let ms_per_frame = if bench_runs > 0 {
            let s = test_set[0].lr.frame_shape();
            bench_steps(&trained.params, s.height, s.width, bench_runs, DEFAULT_WARMUPS)?.mean_ms
        } else {
            0.0
        };
        rows.push(AblationRow {
            variant,
            params: cfg.param_count(),
            ms_per_frame,
            psnr_db: report.mean_psnr_db,
            final_loss: trained.report.final_loss,
        });
    }
    Ok(AblationReport {
        seed: config.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_clip, SynthKind};

    #[test]
    fn tiny_sweep_reports_every_variant() {
        let pairs: Vec<_> = (0..2)
            .map(|i| ClipPair::from_hr(synth_clip(SynthKind::BouncingRect, 3, 16, i).unwrap()).unwrap())
            .collect();
        let cfg = TrainConfig {
            batch_size: 1,
            crop: 4,
            clip_len: 3,
            total_iters: 2,
            log_every: 1,
            ..TrainConfig::default()
        };
        let mut calls = 0;
        let r = run_ablation(&ModelConfig::with_channels(2), &cfg, &pairs, &pairs, 1, &mut |_, _, _| calls += 1)
            .unwrap();
        assert_eq!(calls, 6);
        let names: Vec<_> = r.rows.iter().map(|r| r.variant).collect();
        assert_eq!(names, vec![Variant::Baseline, Variant::SlidingWindow, Variant::Full]);
        assert!(r.rows[0].params < r.rows[1].params && r.rows[1].params < r.rows[2].params);
        assert_eq!(r.to_csv().lines().count(), 4);
    }

    #[test]
    fn ordering_rule() {
        let row = |variant, psnr_db| AblationRow {
            variant,
            params: 0,
            ms_per_frame: 0.0,
            psnr_db,
            final_loss: 0.0,
        };
        let mut r = AblationReport {
            seed: 0,
            rows: vec![row(Variant::Baseline, 30.0), row(Variant::SlidingWindow, 30.1), row(Variant::Full, 30.25)],
        };
        assert!(r.ordering_holds(0.2));
        assert!(!r.ordering_holds(0.3));
        r.rows[1].psnr_db = 30.3;
        assert!(!r.ordering_holds(0.2));
    }
}
