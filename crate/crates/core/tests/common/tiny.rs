//! A configuration small enough to run the whole pipeline in seconds.

use std::path::Path;

use isac_recon::config::RunConfig;
use isac_recon::harness::{self, Method, TrainTarget};
use isac_recon::model::ModelConfig;

pub fn tiny_config() -> RunConfig {
    let mut c = RunConfig { seed: 7, n_samples: 24, raw_points: 800, ..RunConfig::default() };
    c.split.validation_size = Some(6);
    c.channel.waveform.n_tones = 128;
    c.channel.n_paths = 8;
    c.sage.max_paths = 8;
    c.sage.outer_iterations = 2;
    c.sage.coarse_step_deg = 2.0;
    c.prep.m = 48;
    c.model = ModelConfig {
        n_paths: 8,
        token_dim: 8,
        stem_hidden: 8,
        heads: 2,
        layers: 1,
        ff_dim: 16,
        feature_dim: 8,
        scene_hidden: 8,
        point_hidden: 16,
        mixed_layers: 2,
        n_points: 48,
        crnet_width: 16,
        crnet_layers: 3,
    };
    c.train.batch_size = 4;
    c.train.adam.lr = 1e-3;
    c.train.stage1_max_epochs = 3;
    c.train.stage2_max_epochs = 3;
    c.train.stage2_min_epochs = 1;
    c.train.stage3_epochs = 2;
    c.train.crnet_epochs = 2;
    c.train.anchors = 8;
    c.train.neighbours = 8;
    c.sequence.frames = 6;
    c.eval.showcase = 2;
    c.eval.bench_runs = 3;
    c
}

/// Trainable parameter count of the cascade from the configuration alone.
pub fn analytic_mscr_params(c: &ModelConfig) -> usize {
    let lin = |i: usize, o: usize| i * o + o;
    let t = c.token_dim;
    let layer = 4 * lin(t, t) + 2 * 2 * t + lin(t, c.ff_dim) + lin(c.ff_dim, t);
    let encoder = lin(1, c.stem_hidden)
        + lin(c.stem_hidden, t)
        + lin(2, c.stem_hidden)
        + lin(c.stem_hidden, t)
        + lin(2 * t, t)
        + c.layers * layer
        + lin(t, c.feature_dim);
    let f = c.feature_dim;
    let scene = 2 * f + lin(f, c.scene_hidden) + lin(c.scene_hidden, 2);
    let centers = 2 * lin(f, 6);
    let h = c.point_hidden;
    let point = lin(f + 6, h) + lin(h, h) + c.mixed_layers * lin(h, h) + lin(h, 3 * c.n_points);
    3 * encoder + scene + centers + point + 2
}

/// gen, train (all stages and the baseline), eval, sequence, bench and
/// report into `dir`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) {
    let (data, models, eval) = (dir.join("data"), dir.join("models"), dir.join("eval"));
    harness::cmd_gen(cfg, &data).unwrap();
    harness::cmd_train(cfg, &data, &models, TrainTarget::All).unwrap();
    harness::cmd_train(cfg, &data, &models, TrainTarget::Crnet).unwrap();
    harness::cmd_eval(cfg, &data, &models, &eval, &Method::ALL).unwrap();
    harness::cmd_sequence(cfg, &data, &models, &dir.join("sequence"), &[Method::Mscr, Method::Backprojection]).unwrap();
    harness::cmd_bench(cfg, &data, &models, &eval, cfg.eval.bench_runs).unwrap();
    harness::cmd_report(&eval, &dir.join("report")).unwrap();
}
