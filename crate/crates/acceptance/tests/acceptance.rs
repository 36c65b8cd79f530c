//! End-to-end acceptance checks, one verdict line per criterion.
//!
//! Runs without the libtest harness so the criteria execute in order, share
//! one data directory and one micro training run, and report their runtime
//! against a fixed budget.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rulfuse::dataset::{fewshot_subsample, DatasetBundle, DatasetId, LoadOptions, SensorSelection, WindowSample};
use rulfuse::harness::{self, RunArtifacts, TrainConfig, FEWSHOT_RATIOS};
use rulfuse::metrics;
use rulfuse::model::{Model, ModelConfig};
use rulfuse::numkit::{bilinear_map, ParamStore, SeededRng, Session, SparseMap, Tensor, Var};
use rulfuse::spectral::{recurrence_plot, Renderer, RpConfig, SpectralConfig, StftConfig, WindowFn};
use rulfuse::temporal::{patchify, PatchConfig};
use rulfuse::textknow::{build_prompt, detokenize, tokenize, train_bpe};
use rulfuse::tmaf::{self, Context, FusionMode, TmafConfig};
use rulfuse::vlma::{EncoderVariant, LmConfig, MaeConfig, VisionConfig};
use rulfuse_tests::{check_gradients, normal_tensor, run_criterion, Checks, Criterion, DataDir, GradReport};

/// Constant-125 predictor on the default synthetic FD001 test split, from
/// `scripts/constant_baseline.py`.
const BASELINE_RMSE: f64 = 61.71539516198531;
const METRIC_TOL: f64 = 1e-12;
const PATCH_LENGTHS: [usize; 3] = [8, 40, 50];
const GRAD_SEEDS: u64 = 10;
const GRAD_PICKS: usize = 3;
const RP_SIGNALS: u64 = 100;
const RP_DENSITY_TOL: f64 = 0.02;
const DC_ENERGY: f64 = 0.999;
const FUSION_INPUTS: u64 = 50;
const FUSION_TOL: f64 = 1e-12;
const TEXT_MAX: usize = 512;
const MAE_RATIO: f64 = 0.5;
const FEWSHOT_COUNTS: [usize; 5] = [5, 10, 20, 50, 100];

type Outcome = Result<(), String>;
type PairCounts = Vec<((Vec<u8>, Vec<u8>), usize)>;

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn criterion(id: u8, title: &'static str, secs: u64) -> Criterion {
    Criterion {
        id,
        title,
        budget: Duration::from_secs(secs),
    }
}

fn micro_config(data: &Path, root: &Path, name: &str) -> Result<TrainConfig, String> {
    let mut c = TrainConfig::parse_str(include_str!("../../../configs/micro.cfg")).map_err(e2s)?;
    c.data_dir = data.to_path_buf();
    c.out_dir = root.join(name);
    c.cache_dir = root.join(format!("{name}-cache"));
    Ok(c)
}

// 1 ---------------------------------------------------------------------

fn metric_exactness(c: &mut Checks) -> Outcome {
    let e1 = 1f64.exp() - 1.0;
    let late = metrics::score(&[110.0], &[100.0]).map_err(e2s)?;
    let early = metrics::score(&[87.0], &[100.0]).map_err(e2s)?;
    c.check((late - e1).abs() < METRIC_TOL, format!("late +10 score {late} vs e-1"));
    c.check(
        (early - e1).abs() < METRIC_TOL,
        format!("early -13 score {early} vs e-1"),
    );
    let r = metrics::rmse(&[3.0, 4.0], &[0.0, 0.0]).map_err(e2s)?;
    c.check(
        (r - 12.5f64.sqrt()).abs() < METRIC_TOL,
        format!("rmse([3,4],[0,0]) = {r}"),
    );
    let late13 = metrics::score(&[113.0], &[100.0]).map_err(e2s)?;
    c.check(
        (late13 - (1.3f64.exp() - 1.0)).abs() < METRIC_TOL && late13 > early,
        format!("late +13 score {late13} exceeds early -13 score {early}"),
    );
    Ok(())
}

// 2 ---------------------------------------------------------------------

/// Pad with `s` copies of the last row and enumerate every window start.
fn naive_patches(x: &[Vec<f64>], p: usize, s: usize) -> Vec<Vec<f64>> {
    let mut rows = x.to_vec();
    for _ in 0..s {
        rows.push(x[x.len() - 1].clone());
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + p <= rows.len() {
        out.push(rows[start..start + p].concat());
        start += s;
    }
    out
}

fn patch_arithmetic(c: &mut Checks) -> Outcome {
    let mut rng = SeededRng::new(2);
    for len in PATCH_LENGTHS {
        let cfg = PatchConfig {
            window_len: len,
            channels: 3,
            patch_len: 4,
            stride: 1,
            ..PatchConfig::default()
        };
        let rows: Vec<Vec<f64>> = (0..len).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
        let x = Tensor::from_rows(&rows).map_err(e2s)?;
        let got = patchify(&x, &cfg).map_err(e2s)?;
        let want = naive_patches(&rows, 4, 1);
        let same = got.rows() == want.len() && (0..want.len()).all(|i| got.row(i) == want[i].as_slice());
        c.check(
            cfg.n_patches() == len - 4 + 2 && got.rows() == len - 4 + 2 && same,
            format!(
                "L={len}: {} patches, oracle {}, expected {}",
                got.rows(),
                want.len(),
                len - 4 + 2
            ),
        );
    }
    Ok(())
}

// 3 ---------------------------------------------------------------------

type OpFn = Box<dyn Fn(&mut Session<'_, f64>, &[Var]) -> rulfuse::Result<Var>>;

/// `Σ out ⊙ W` with a fixed random `W`, so every output entry matters.
fn weighted_sum(s: &mut Session<'_, f64>, out: Var) -> rulfuse::Result<Var> {
    let w = normal_tensor(s.g.shape(out), &mut SeededRng::new(0xA11));
    let w = s.g.constant(w);
    let p = s.g.mul(out, w)?;
    Ok(s.g.sum(p))
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| v + 0.1 * v.signum())
}

fn op_cases(rng: &mut SeededRng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let mut t = |shape: &[usize]| normal_tensor(shape, rng);
    let mask: Vec<bool> = (0..12).map(|i| i % 4 != 1).collect();
    let bil = Arc::new(bilinear_map::<f64>(3, 4, 5, 6));
    let gat = Arc::new(SparseMap::<f64>::gather(
        12,
        [Some(3), None, Some(0), Some(3), Some(11)],
    ));
    vec![
        (
            "add",
            vec![t(&[3, 4]), t(&[3, 4])],
            Box::new(|s, v| s.g.add(v[0], v[1])),
        ),
        (
            "sub",
            vec![t(&[3, 4]), t(&[3, 4])],
            Box::new(|s, v| s.g.sub(v[0], v[1])),
        ),
        (
            "mul",
            vec![t(&[3, 4]), t(&[3, 4])],
            Box::new(|s, v| s.g.mul(v[0], v[1])),
        ),
        ("scale", vec![t(&[3, 4])], Box::new(|s, v| Ok(s.g.scale(v[0], -1.7)))),
        (
            "add_row",
            vec![t(&[3, 4]), t(&[1, 4])],
            Box::new(|s, v| s.g.add_row(v[0], v[1])),
        ),
        (
            "mul_row",
            vec![t(&[3, 4]), t(&[1, 4])],
            Box::new(|s, v| s.g.mul_row(v[0], v[1])),
        ),
        (
            "matmul",
            vec![t(&[3, 4]), t(&[4, 2])],
            Box::new(|s, v| s.g.matmul(v[0], v[1])),
        ),
        (
            "matmul_t",
            vec![t(&[3, 4]), t(&[2, 4])],
            Box::new(|s, v| s.g.matmul_t(v[0], v[1])),
        ),
        ("transpose", vec![t(&[3, 4])], Box::new(|s, v| s.g.transpose(v[0]))),
        (
            "relu",
            vec![away_from_zero(t(&[3, 4]))],
            Box::new(|s, v| Ok(s.g.relu(v[0]))),
        ),
        ("gelu", vec![t(&[3, 4])], Box::new(|s, v| Ok(s.g.gelu(v[0])))),
        (
            "softmax_rows",
            vec![t(&[3, 4])],
            Box::new(|s, v| s.g.softmax_rows(v[0])),
        ),
        (
            "softmax_rows_masked",
            vec![t(&[3, 4])],
            Box::new(move |s, v| s.g.softmax_rows_masked(v[0], Some(&mask))),
        ),
        (
            "layer_norm",
            vec![t(&[3, 4])],
            Box::new(|s, v| Ok(s.g.layer_norm(v[0], 1e-5))),
        ),
        (
            "dropout",
            vec![t(&[3, 4])],
            Box::new(|s, v| s.g.dropout(v[0], 0.3, &mut SeededRng::new(17))),
        ),
        (
            "concat_cols",
            vec![t(&[3, 2]), t(&[3, 3])],
            Box::new(|s, v| s.g.concat_cols(&[v[0], v[1]])),
        ),
        (
            "concat_rows",
            vec![t(&[2, 3]), t(&[1, 3])],
            Box::new(|s, v| s.g.concat_rows(&[v[0], v[1]])),
        ),
        ("sum", vec![t(&[3, 4])], Box::new(|s, v| Ok(s.g.sum(v[0])))),
        ("mean", vec![t(&[3, 4])], Box::new(|s, v| Ok(s.g.mean(v[0])))),
        ("mean_rows", vec![t(&[3, 4])], Box::new(|s, v| Ok(s.g.mean_rows(v[0])))),
        (
            "sparse (bilinear)",
            vec![t(&[3, 4])],
            Box::new(move |s, v| s.g.sparse(v[0], bil.clone(), &[5, 6])),
        ),
        (
            "sparse (gather)",
            vec![t(&[3, 4])],
            Box::new(move |s, v| s.g.sparse(v[0], gat.clone(), &[5])),
        ),
        (
            "gather_rows",
            vec![t(&[3, 4])],
            Box::new(|s, v| s.g.gather_rows(v[0], &[Some(2), None, Some(0), Some(2)])),
        ),
        ("reshape", vec![t(&[3, 4])], Box::new(|s, v| s.g.reshape(v[0], &[2, 6]))),
    ]
}

fn grad_model_config(seed: u64) -> ModelConfig {
    let variant = EncoderVariant::ALL[(seed % 3) as usize];
    ModelConfig {
        temporal: PatchConfig {
            window_len: 12,
            channels: 3,
            patch_len: 4,
            stride: 1 + (seed % 2) as usize,
            d_model: 8,
            n_heads: 2,
            n_blocks: 2,
        },
        spectral: SpectralConfig {
            stft: StftConfig {
                win_len: 8,
                ..StftConfig::default()
            },
            ..SpectralConfig::default()
        },
        vision: VisionConfig {
            variant,
            image_size: 12,
            patch: 4,
            dim: 8,
            depth: 2,
            heads: 2,
        },
        lm: LmConfig {
            width: 8,
            layers: 2,
            heads: 2,
            causal: seed % 4 == 3,
            capacity: 0,
        },
        mae: MaeConfig {
            mask_ratio: 0.75,
            dec_dim: 8,
            dec_depth: 2,
            dec_heads: 2,
        },
        tmaf: TmafConfig {
            key_dim: 8,
            value_dim: 4,
            fused_dim: 8,
            hidden: 16,
            dropout: 0.5,
            mode: if seed.is_multiple_of(2) {
                FusionMode::BroadcastGlobal
            } else {
                FusionMode::TokenKeys
            },
            residual: seed % 4 >= 2,
            ..TmafConfig::default()
        },
        text_max_len: 48,
        rul_max: 125.0,
    }
}

fn model_gradients(seed: u64) -> rulfuse::Result<GradReport> {
    let cfg = grad_model_config(seed);
    let mut rng = SeededRng::new(seed).fork(1);
    let w = WindowSample {
        unit_id: 1,
        end_cycle: 12,
        values: (0..12).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect(),
        rul_label: 20.0 + 80.0 * rng.uniform(),
    };
    let meta = DatasetId::FD001.meta();
    let tmpl = harness::template(1)?;
    let sensors = vec![2, 3, 4];
    let vocab = train_bpe(&[build_prompt(&meta, &w, &sensors, &tmpl)?], 32)?;
    let m = Model::<f64>::new(cfg, vocab, tmpl, meta, sensors)?;
    let mut store = ParamStore::new();
    m.init_params(&mut store, seed);
    // The reconstruction head starts at zero, which would hide every decoder
    // gradient; check at a generic point instead.
    let mut head_rng = rng.fork(5);
    store.map_values(|name, t| {
        if name.starts_with("mae.head") {
            t.data_mut().iter_mut().for_each(|v| *v = 0.1 * head_rng.normal());
        }
    });
    let x = m.prepare(&w)?;
    let mae_mask = m.vlma.mae_sample_mask(&mut rng.fork(2));
    let with_mae = cfg.vision.variant == EncoderVariant::VitMae;
    check_gradients(&store, Some(GRAD_PICKS), &mut rng.fork(3), |s| {
        let f = m.forward(s, &x, &mut SeededRng::new(seed).fork(4))?;
        let fused = m.loss(s, f.y, w.rul_label)?;
        let y1 = m.stage1_forward(s, &x)?;
        let l1 = m.loss(s, y1, w.rul_label)?;
        let mut total = s.g.add(fused, l1)?;
        if with_mae {
            let lm = m.vlma.mae_loss_with_mask(s, &x.patches, &mae_mask)?;
            let lm = s.g.reshape(lm, &[1, 1])?;
            total = s.g.add(total, lm)?;
        }
        Ok(total)
    })
}

fn gradient_suite(c: &mut Checks) -> Outcome {
    let mut ops = GradReport::default();
    let mut model = GradReport::default();
    let mut failed_ops = BTreeSet::new();
    for seed in 0..GRAD_SEEDS {
        let mut rng = SeededRng::new(seed);
        for (name, inputs, f) in op_cases(&mut rng) {
            let mut store = ParamStore::new();
            for (i, t) in inputs.into_iter().enumerate() {
                store.insert(format!("x{i}"), t);
            }
            let n = store.len();
            let r = check_gradients(&store, None, &mut rng, |s| {
                let vars = (0..n)
                    .map(|i| s.p(&format!("x{i}")))
                    .collect::<rulfuse::Result<Vec<_>>>()?;
                let out = f(s, &vars)?;
                weighted_sum(s, out)
            })
            .map_err(|e| format!("{name}: {e}"))?;
            if !r.passed() {
                failed_ops.insert(format!("{name} (seed {seed}: {})", r.worst_at));
            }
            ops.merge(r);
        }
        let r = model_gradients(seed).map_err(|e| format!("micro model seed {seed}: {e}"))?;
        c.check(
            r.passed(),
            format!(
                "micro model seed {seed} ({} / {}): {} entries, worst {:.2e} at {}; {} structurally zero, max |numeric| {:.1e}",
                EncoderVariant::ALL[(seed % 3) as usize].name(),
                grad_model_config(seed).tmaf.mode.name(),
                r.checked,
                r.worst,
                r.worst_at,
                r.zero_checked,
                r.zero_worst
            ),
        );
        model.merge(r);
    }
    c.check(
        failed_ops.is_empty() && ops.zero_checked == 0,
        format!(
            "{} op entries over {GRAD_SEEDS} seeds, worst {:.2e}; failing: {failed_ops:?}",
            ops.checked, ops.worst
        ),
    );
    c.note(format!("model worst overall {:.2e}", model.worst));
    Ok(())
}

// 4 ---------------------------------------------------------------------

fn embed(s: &[f64], m: usize, tau: usize) -> Vec<Vec<f64>> {
    let n = s.len() - (m - 1) * tau;
    (0..n).map(|i| (0..m).map(|k| s[i + k * tau]).collect()).collect()
}

/// Brute-force recurrence matrix and its threshold.
fn rp_oracle(s: &[f64], cfg: &RpConfig) -> (Vec<Vec<bool>>, f64) {
    let pts = embed(s, cfg.embed_dim, cfg.delay);
    let n = pts.len();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut upper: Vec<f64> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i < j {
                upper.push(d(&pts[i], &pts[j]));
            }
        }
    }
    upper.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (cfg.quantile * upper.len() as f64).ceil() as usize;
    let eps = upper[rank.max(1) - 1];
    let r = (0..n)
        .map(|i| (0..n).map(|j| i == j || d(&pts[i], &pts[j]) <= eps).collect())
        .collect();
    (r, eps)
}

fn dc_fraction(r: &Renderer, level: f64) -> rulfuse::Result<f64> {
    let v = r.stft(&vec![level; r.window_len()])?;
    let total: f64 = v.data.iter().map(|x| x * x).sum();
    let dc: f64 = (0..v.cols).map(|f| v.at(0, f).powi(2)).sum();
    Ok(dc / total)
}

/// `|∫ sin(2πt/T) ψ*((t−b)/a)/√a dt|` by the trapezoid rule on an unbounded
/// signal.
fn cwt_quadrature(period: f64, a: f64, b: f64, omega0: f64) -> f64 {
    let half = 12.0 * a;
    let steps = 24_000;
    let dt = 2.0 * half / steps as f64;
    let (mut re, mut im) = (0.0, 0.0);
    for k in 0..=steps {
        let t = b - half + k as f64 * dt;
        let u = (t - b) / a;
        let env = PI.powf(-0.25) * (-0.5 * u * u).exp() / a.sqrt();
        let x = (2.0 * PI * t / period).sin();
        let wgt = if k == 0 || k == steps { 0.5 } else { 1.0 };
        re += wgt * x * env * (omega0 * u).cos();
        im -= wgt * x * env * (omega0 * u).sin();
    }
    (re * dt).hypot(im * dt)
}

fn argmax(v: impl Iterator<Item = f64>) -> usize {
    v.enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, x)| if x > bv { (i, x) } else { (bi, bv) },
        )
        .0
}

fn spectral_invariants(c: &mut Checks, data: &DataDir) -> Outcome {
    let rp_cfg = RpConfig::default();
    let mut rng = SeededRng::new(4);
    let (mut sym_ok, mut oracle_ok) = (true, true);
    let mut worst_density = 0.0f64;
    for _ in 0..RP_SIGNALS {
        let s: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
        let r = recurrence_plot(&s, &rp_cfg).map_err(e2s)?;
        let n = r.rows;
        for i in 0..n {
            sym_ok &= r.at(i, i) == 1.0;
            for j in 0..n {
                sym_ok &= r.at(i, j) == r.at(j, i);
            }
        }
        let (want, _) = rp_oracle(&s, &rp_cfg);
        oracle_ok &= (0..n).all(|i| (0..n).all(|j| (r.at(i, j) == 1.0) == want[i][j]));
        let off: usize = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && want[i][j])
            .count();
        let density = off as f64 / (n * (n - 1)) as f64;
        worst_density = worst_density.max((density - rp_cfg.quantile).abs());
    }
    c.check(sym_ok, format!("symmetric with unit diagonal on {RP_SIGNALS} signals"));
    c.check(oracle_ok, "recurrence matrices equal the brute-force oracle");
    c.check(
        worst_density <= RP_DENSITY_TOL,
        format!("off-diagonal density within {worst_density:.4} of {}", rp_cfg.quantile),
    );

    let r = Renderer::new(SpectralConfig::default(), 40).map_err(e2s)?;
    let hann = dc_fraction(&r, 1.0).map_err(e2s)?;
    c.check(
        hann > DC_ENERGY,
        format!("DC signal bin-0 energy {hann:.6} (Hann window)"),
    );
    let rect_cfg = SpectralConfig {
        stft: StftConfig {
            window: WindowFn::Rectangular,
            ..StftConfig::default()
        },
        ..SpectralConfig::default()
    };
    let rect = dc_fraction(&Renderer::new(rect_cfg, 40).map_err(e2s)?, 1.0).map_err(e2s)?;
    c.note(format!("DC signal bin-0 energy {rect:.6} with a rectangular window"));

    let omega0 = r.config().cwt.omega0;
    for period in [3.0, 4.0, 5.0, 6.0] {
        let s: Vec<f64> = (0..40).map(|t| (2.0 * PI * t as f64 / period).sin()).collect();
        let v = r.cwt(&s).map_err(e2s)?;
        let b = 20;
        let got = argmax((0..v.rows).map(|a| v.at(a, b)));
        let want = argmax(r.scales.iter().map(|&a| cwt_quadrature(period, a, b as f64, omega0)));
        c.check(
            got == want,
            format!("period {period}: CWT argmax scale {got}, quadrature {want}"),
        );
    }

    let bundle = DatasetBundle::load(&data.path, DatasetId::FD001, &LoadOptions::default()).map_err(e2s)?;
    let mut ok = true;
    for w in bundle.test.iter().take(5) {
        let img = r.render(&w.values).map_err(e2s)?;
        let t = img.to_tensor::<f64>();
        ok &= t.shape() == [3, 114, 114] && img.data.iter().all(|v| (0.0..=1.0).contains(v));
    }
    c.check(ok, "composed images are 3x114x114 with values in [0, 1]");
    Ok(())
}

// 5 ---------------------------------------------------------------------

fn broadcast_degeneracy(c: &mut Checks) -> Outcome {
    let (n, d, ctx) = (10, 16, 12);
    let mut cfg = TmafConfig {
        d_model: d,
        context_dim: ctx,
        key_dim: 8,
        value_dim: 6,
        fused_dim: 8,
        hidden: 16,
        ..TmafConfig::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..FUSION_INPUTS {
        let mut rng = SeededRng::new(seed);
        let mut store = ParamStore::new();
        cfg.init_params(&mut store, &mut rng);
        let f_ts = normal_tensor(&[n, d], &mut rng);
        let g = normal_tensor(&[1, ctx], &mut rng);
        let mut s = Session::new(&store, false);
        let fv = s.g.constant(f_ts);
        let gv = s.g.constant(g.clone());
        let (q, k, v) = tmaf::project_qkv(&mut s, fv, Context::Global(gv), &cfg).map_err(e2s)?;
        let (out, _) = tmaf::attention(&mut s, q, k, v).map_err(e2s)?;
        let out = s.g.value(out);
        let wv = store.get("tmaf.wv").unwrap();
        let expect: Vec<f64> = (0..cfg.value_dim)
            .map(|j| (0..ctx).map(|i| g.data()[i] * wv.at(i, j)).sum())
            .collect();
        for r in 0..n {
            for (j, e) in expect.iter().enumerate() {
                worst = worst
                    .max((out.at(r, j) - e).abs())
                    .max((out.at(r, j) - out.at(0, j)).abs());
            }
        }
    }
    c.check(
        worst <= FUSION_TOL,
        format!("{FUSION_INPUTS} inputs: every F_attn row equals g·Wv, max deviation {worst:.2e}"),
    );

    cfg.mode = FusionMode::TokenKeys;
    let mut rng = SeededRng::new(99);
    let mut store = ParamStore::new();
    cfg.init_params(&mut store, &mut rng);
    let mut s = Session::new(&store, false);
    let fv = s.g.constant(normal_tensor(&[n, d], &mut rng));
    let tv = s.g.constant(normal_tensor(&[7, ctx], &mut rng));
    let (q, k, v) = tmaf::project_qkv(&mut s, fv, Context::Tokens(tv), &cfg).map_err(e2s)?;
    let (out, _) = tmaf::attention(&mut s, q, k, v).map_err(e2s)?;
    let out = s.g.value(out);
    let spread = (1..n)
        .flat_map(|r| (0..cfg.value_dim).map(move |j| (r, j)))
        .map(|(r, j)| (out.at(r, j) - out.at(0, j)).abs())
        .fold(0.0, f64::max);
    c.check(spread > 1e-3, format!("token_keys rows differ by up to {spread:.3e}"));
    Ok(())
}

// 6 ---------------------------------------------------------------------

/// Textbook BPE over whitespace-led chunks: count every adjacent pair,
/// merge the most frequent (ties to the smallest byte strings), repeat.
fn bpe_oracle(corpus: &[&str], merges: usize) -> Vec<Vec<u8>> {
    let mut words: Vec<Vec<Vec<u8>>> = Vec::new();
    for text in corpus {
        let b = text.as_bytes();
        let mut cur: Vec<Vec<u8>> = Vec::new();
        for (i, &ch) in b.iter().enumerate() {
            if ch == b' ' && i > 0 && b[i - 1] != b' ' && !cur.is_empty() {
                words.push(std::mem::take(&mut cur));
            }
            cur.push(vec![ch]);
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    let mut learned = Vec::new();
    while learned.len() < merges {
        let mut counts: PairCounts = Vec::new();
        for w in &words {
            for p in w.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                match counts.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, n)) => *n += 1,
                    None => counts.push((key, 1)),
                }
            }
        }
        counts.sort_by(|(ka, na), (kb, nb)| nb.cmp(na).then_with(|| ka.cmp(kb)));
        let Some(((l, r), n)) = counts.into_iter().next() else {
            break;
        };
        if n < 2 && !learned.is_empty() {
            break;
        }
        let joined = [l.clone(), r.clone()].concat();
        for w in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        learned.push(joined);
    }
    learned
}

fn tokenizer_round_trip(c: &mut Checks, data: &DataDir) -> Outcome {
    let cfg = TrainConfig {
        data_dir: data.path.clone(),
        ..TrainConfig::default()
    };
    let run = harness::Run::prepare(&cfg, None).map_err(e2s)?;
    let m = &run.model;
    let mut mismatches = 0usize;
    let mut total = 0usize;
    let mut longest = String::new();
    for w in run.data.train.iter().chain(&run.data.val).chain(&run.data.test) {
        let p = m.prompt(w).map_err(e2s)?;
        let seq = tokenize(&p, &m.vocab, p.len() + 1);
        if detokenize(&seq.ids, &m.vocab) != p || seq.length != seq.original_len {
            mismatches += 1;
        }
        if p.len() > longest.len() {
            longest = p;
        }
        total += 1;
    }
    c.check(
        mismatches == 0,
        format!("{total} FD001 prompts round-trip, {mismatches} mismatches"),
    );

    let long = [longest.as_str(); 8].join("\n");
    let full = tokenize(&long, &m.vocab, long.len() + 1);
    let cut = tokenize(&long, &m.vocab, TEXT_MAX);
    c.check(
        full.original_len > TEXT_MAX
            && cut.ids.len() == TEXT_MAX
            && cut.length == TEXT_MAX
            && cut.original_len == full.original_len
            && cut.ids[..] == full.ids[..TEXT_MAX],
        format!("{}-token text truncated to exactly {TEXT_MAX}", full.original_len),
    );
    let short = tokenize("s2 0.5", &m.vocab, TEXT_MAX);
    c.check(
        short.ids.len() == TEXT_MAX && short.ids[short.length..].iter().all(|&i| i == m.vocab.pad_id()),
        "short text padded to the fixed length",
    );

    let toy = [
        "low lower lowest newer wider",
        "new newer newest low low",
        "aaab abab  ba ab aaa",
        "s2 0.41 0.42 0.43 s3 0.41",
    ];
    let n_merges = 24;
    let owned: Vec<String> = toy.iter().map(|s| s.to_string()).collect();
    let vocab = train_bpe(&owned, n_merges).map_err(e2s)?;
    let got: Vec<Vec<u8>> = (0..vocab.merges().len())
        .map(|r| vocab.piece(256 + r as u32).unwrap().to_vec())
        .collect();
    let want = bpe_oracle(&toy, n_merges);
    c.check(
        got == want,
        format!(
            "{} learned merges match the pair-frequency oracle ({} expected)",
            got.len(),
            want.len()
        ),
    );
    Ok(())
}

// 7 / 9 -----------------------------------------------------------------

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn learning_smoke(c: &mut Checks, data: &DataDir, root: &Path) -> Result<RunArtifacts, String> {
    let cfg = micro_config(&data.path, root, "micro-a")?;
    let art = harness::train(&cfg).map_err(e2s)?;
    for stage in [1u8, 2] {
        let losses: Vec<f64> = art
            .curve
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.train_loss)
            .collect();
        c.check(
            losses.len() >= 2 && strictly_decreasing(&losses),
            format!("stage {stage} training loss {losses:.5?}"),
        );
    }
    let (first, last) = (art.curve[0].train_loss, art.curve[art.curve.len() - 1].train_loss);
    c.check(last < first, format!("final loss {last:.5} below initial {first:.5}"));
    c.check(art.units == cfg.engine_limit, format!("{} training engines", art.units));
    let baseline = if data.synthetic {
        let b = harness::constant_baseline(&cfg, 125.0).map_err(e2s)?;
        c.check(
            (b.rmse - BASELINE_RMSE).abs() < 1e-9,
            format!("constant-125 baseline {:.6} is the pinned value", b.rmse),
        );
        BASELINE_RMSE
    } else {
        harness::constant_baseline(&cfg, 125.0).map_err(e2s)?.rmse
    };
    c.check(
        art.report.rmse < baseline,
        format!(
            "test RMSE {:.4} on {} engines beats constant-125 {baseline:.4}",
            art.report.rmse, art.report.n
        ),
    );
    Ok(art)
}

fn determinism(c: &mut Checks, first: Option<&RunArtifacts>, data: &DataDir, root: &Path) -> Outcome {
    let first = match first {
        Some(a) => a.clone(),
        None => harness::train(&micro_config(&data.path, root, "micro-a")?).map_err(e2s)?,
    };
    let mut cfg = TrainConfig::load(&first.config_snapshot).map_err(e2s)?;
    c.check(cfg.threads == 1, "single-threaded");
    cfg.out_dir = root.join("micro-b");
    cfg.cache_dir = root.join("micro-b-cache");
    let second = harness::train(&cfg).map_err(e2s)?;
    let same =
        |a: &Path, b: &Path| -> Result<bool, String> { Ok(fs::read(a).map_err(e2s)? == fs::read(b).map_err(e2s)?) };
    c.check(
        same(&first.metrics_json, &second.metrics_json)?,
        "metrics JSON byte-identical",
    );
    c.check(
        same(&first.checkpoint, &second.checkpoint)?,
        "checkpoint byte-identical",
    );
    c.check(same(&first.curve_csv, &second.curve_csv)?, "loss curve byte-identical");
    Ok(())
}

// 8 ---------------------------------------------------------------------

fn mae_pretraining(c: &mut Checks, data: &DataDir, root: &Path) -> Outcome {
    let mut cfg = micro_config(&data.path, root, "mae")?;
    cfg.encoder = EncoderVariant::VitMae;
    cfg.mae_steps = 200;
    cfg.mae_images = 32;
    let r = harness::pretrain_mae_run(&cfg).map_err(e2s)?;
    let run = harness::Run::prepare(&cfg, None).map_err(e2s)?;
    let cached = fs::read_dir(&cfg.cache_dir).map_err(e2s)?.count();
    c.check(
        run.mae_images().map_err(e2s)?.len() == 32 && cached == 1,
        "32 images read back from the cache",
    );
    c.check(r.curve.len() == 200, format!("{} optimiser steps", r.curve.len()));
    c.check(
        r.final_eval < MAE_RATIO * r.initial_eval,
        format!(
            "masked reconstruction loss {:.5} -> {:.5} (ratio {:.3})",
            r.initial_eval,
            r.final_eval,
            r.final_eval / r.initial_eval
        ),
    );
    Ok(())
}

// 10 --------------------------------------------------------------------

fn data_contracts(c: &mut Checks, data: &DataDir) -> Outcome {
    for (id, train, test) in [(DatasetId::FD001, 100, 100), (DatasetId::FD002, 260, 259)] {
        let b = DatasetBundle::load(&data.path, id, &LoadOptions::default()).map_err(e2s)?;
        let m = &b.manifest;
        c.check(
            m.train_engines_in_file == train && m.test_engines_in_file == test,
            format!(
                "{id}: {} train / {} test engines",
                m.train_engines_in_file, m.test_engines_in_file
            ),
        );
        c.check(
            b.sensor_ids.len() == 14,
            format!("{id}: {} sensor channels", b.sensor_ids.len()),
        );
    }
    c.check(
        SensorSelection::default().kept_count() == 14,
        "default selection keeps 14 of 21 sensors",
    );
    let units: Vec<u32> = (1..=100).collect();
    let counts = FEWSHOT_RATIOS
        .iter()
        .map(|&r| fewshot_subsample(&units, r, 42).map(|p| p.selected_units.len()))
        .collect::<rulfuse::Result<Vec<_>>>()
        .map_err(e2s)?;
    c.check(
        counts == FEWSHOT_COUNTS,
        format!("few-shot counts {counts:?} for ratios {FEWSHOT_RATIOS:?}"),
    );
    Ok(())
}

fn main() {
    let data = match DataDir::acquire() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("cannot prepare data: {e}");
            std::process::exit(2);
        }
    };
    let scratch = tempfile::tempdir().expect("scratch directory");
    let root = scratch.path();
    println!(
        "acceptance suite on {} data in {}",
        if data.synthetic { "synthetic" } else { "C-MAPSS" },
        data.path.display()
    );

    let mut results = Vec::new();
    results.push(run_criterion(&criterion(1, "metric exactness", 1), metric_exactness));
    results.push(run_criterion(&criterion(2, "patch arithmetic", 1), patch_arithmetic));
    results.push(run_criterion(&criterion(3, "gradient suite", 120), gradient_suite));
    results.push(run_criterion(&criterion(4, "spectral invariants", 60), |c| {
        spectral_invariants(c, &data)
    }));
    results.push(run_criterion(
        &criterion(5, "broadcast degeneracy", 10),
        broadcast_degeneracy,
    ));
    results.push(run_criterion(&criterion(6, "tokenizer round-trip", 10), |c| {
        tokenizer_round_trip(c, &data)
    }));
    let mut micro = None;
    results.push(run_criterion(&criterion(7, "learning smoke test", 600), |c| {
        micro = Some(learning_smoke(c, &data, root)?);
        Ok(())
    }));
    results.push(run_criterion(&criterion(8, "MAE pretraining", 300), |c| {
        mae_pretraining(c, &data, root)
    }));
    // The budget covers both runs; the first is the smoke-test run above.
    results.push(run_criterion(&criterion(9, "determinism", 600), |c| {
        determinism(c, micro.as_ref(), &data, root)
    }));
    results.push(run_criterion(&criterion(10, "data contracts", 30), |c| {
        data_contracts(c, &data)
    }));

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
