//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.
//!
//! The end-to-end run (criterion 7) trains for several minutes. Set
//! `LNABL_ACCEPT_SKIP_E2E=1` to report it as skipped.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::Instant;

use lnabl::cli::config::RunConfig;
use lnabl::cli::commands::{cmd_pretrain, load_run_corpus, remove_ln_with};
use lnabl::data::{Corpus, EOT};
use lnabl::model::checkpoint::{decode, encode};
use lnabl::model::{sequence_flags, AttnNorm, BatchRef, GptModel, ModelConfig};
use lnabl::norm::{
    fold_and_export, norm_forward, norm_on_tape, split_ln1, NormMode, NormSiteId, NormState, TokenFlags,
};
use lnabl::numerics::{check_many, CheckOptions, Tape, Tensor, Var};
use lnabl::schedule::{LrConfig, RemovalSchedule};
use lnabl::train::{train_loop, MetricsRecord, NoHooks, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "acceptance/table1.rs"]
mod table1;

struct Line {
    id: &'static str,
    pass: bool,
}

fn line(id: &'static str, pass: bool, detail: impl AsRef<str>) -> Line {
    println!("{} [{id}] {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    Line { id, pass }
}

fn nontrivial_norm(state: &mut NormState<f64>, rng: &mut ChaCha8Rng) {
    let h = state.width();
    state.gamma = Tensor::uniform(&[h], 0.5, 1.5, rng);
    state.beta = Tensor::uniform(&[h], -0.3, 0.3, rng);
}

/// Adds noise to every parameter so biases, gammas and betas are not at
/// their neutral initial values.
fn perturb<F: lnabl::numerics::Scalar>(model: &mut GptModel<F>, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_params_mut(|name, t| {
        let gamma = name.ends_with(".gamma");
        for v in t.data_mut() {
            let noise: f64 = rng.random_range(-std..std);
            let base = if gamma { 1.0 + noise } else { v.f64() + noise };
            *v = F::of(base);
        }
    });
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize, vocab: usize) -> Vec<u16> {
    (0..len).map(|_| rng.random_range(0..vocab) as u16).collect()
}

// ---------------------------------------------------------------- 1

type ScalarFn<'a> = &'a dyn Fn(&mut Tape<f64>, &[Var]) -> lnabl::Result<Var>;

fn op_checks() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut out = Vec::new();
    let opts = CheckOptions::default();
    let mut run = |name: &str, f: ScalarFn<'_>, pts: Vec<Tensor<f64>>| {
        let r = check_many(f, &pts, opts).expect(name);
        out.push((name.to_string(), r.max_rel_error));
    };
    let u = |rng: &mut ChaCha8Rng, s: &[usize]| Tensor::<f64>::uniform(s, -1.5, 1.5, rng);
    let w46 = u(&mut rng, &[4, 6]);
    let weighted = move |t: &mut Tape<f64>, y: Var, w: &Tensor<f64>| -> lnabl::Result<Var> {
        let c = t.constant(w.clone());
        let yw = t.mul(y, c)?;
        Ok(t.sum(yw))
    };

    let (a, b) = (u(&mut rng, &[4, 6]), u(&mut rng, &[4, 6]));
    let w = w46.clone();
    run("add", &move |t, v| { let y = t.add(v[0], v[1])?; weighted(t, y, &w) }, vec![a.clone(), b.clone()]);
    let w = w46.clone();
    run("mul", &move |t, v| { let y = t.mul(v[0], v[1])?; weighted(t, y, &w) }, vec![a.clone(), b.clone()]);
    let w = w46.clone();
    run("scale", &move |t, v| { let y = t.scale(v[0], -0.7); weighted(t, y, &w) }, vec![a.clone()]);
    run("sum", &|t, v| { let sq = t.mul(v[0], v[0])?; Ok(t.sum(sq)) }, vec![a.clone()]);

    let (x, m) = (u(&mut rng, &[4, 5]), u(&mut rng, &[5, 6]));
    let w = w46.clone();
    run("matmul", &move |t, v| { let y = t.matmul(v[0], v[1])?; weighted(t, y, &w) }, vec![x.clone(), m.clone()]);
    let bias = u(&mut rng, &[6]);
    let w = w46.clone();
    run(
        "linear",
        &move |t, v| { let y = t.linear(v[0], v[1], Some(v[2]))?; weighted(t, y, &w) },
        vec![x.clone(), m.clone(), bias.clone()],
    );
    let mt = u(&mut rng, &[6, 5]);
    let w = w46.clone();
    run(
        "linear_t",
        &move |t, v| { let y = t.linear_t(v[0], v[1], Some(v[2]))?; weighted(t, y, &w) },
        vec![x.clone(), mt, bias],
    );
    let g = Tensor::<f64>::uniform(&[4, 6], -3.0, 3.0, &mut rng);
    let w = w46.clone();
    run("gelu", &move |t, v| { let y = t.gelu(v[0]); weighted(t, y, &w) }, vec![g]);
    let table = u(&mut rng, &[7, 6]);
    let w = w46.clone();
    run("embed", &move |t, v| { let y = t.embed(v[0], &[3, 0, 3, 6])?; weighted(t, y, &w) }, vec![table]);

    let (batch, seq, heads, h) = (2, 3, 2, 4);
    let qk = u(&mut rng, &[batch * seq, 2 * h]);
    let vv = u(&mut rng, &[batch * seq, h]);
    let wa = u(&mut rng, &[batch * seq, h]);
    run(
        "causal_attention",
        &move |t, v| { let y = t.causal_attention(v[0], v[1], batch, seq, heads)?; weighted(t, y, &wa) },
        vec![qk, vv],
    );
    let logits = u(&mut rng, &[5, 7]);
    run("cross_entropy", &|t, v| t.cross_entropy(v[0], &[0, 6, 3, 3, 1]), vec![logits]);

    let flags = [
        TokenFlags { is_bos: true, is_eot: false },
        TokenFlags::default(),
        TokenFlags { is_bos: false, is_eot: true },
        TokenFlags::default(),
    ];
    for center in [true, false] {
        for mode in [NormMode::Standard, NormMode::Frozen, NormMode::Interpolating(0.35)] {
            let mut st = NormState::<f64>::new(6);
            nontrivial_norm(&mut st, &mut rng);
            st.center_mean = center;
            st.mode = mode;
            st.sigma_bar = 1.3;
            st.sigma0_bar = 4.0;
            st.special_bos_active = mode != NormMode::Standard;
            st.special_eot_active = mode != NormMode::Standard;
            let x = u(&mut rng, &[4, 6]);
            let pts = vec![x, st.gamma.clone(), st.beta.clone()];
            let w = w46.clone();
            let name = format!("norm {mode:?} center={center}");
            run(
                &name,
                &move |t, v| { let y = norm_on_tape(t, v[0], v[1], v[2], &st, &flags)?; weighted(t, y, &w) },
                pts,
            );
        }
    }
    out
}

/// Central differences over sampled coordinates of every parameter of a
/// 64-bit model, against `loss_and_grads`.
fn model_check(model: &GptModel<f64>, tokens: &[u16], targets: &[u16], per_tensor: usize, seed: u64) -> f64 {
    let flags = sequence_flags(tokens, EOT);
    let batch = BatchRef::new(tokens, &flags, 1, tokens.len());
    let (_, grads) = model.loss_and_grads(&batch, targets).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (name, g) in &grads {
        let n = g.len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut rng, n, per_tensor).into_vec()
        };
        for j in coords {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.visit_params_mut(|nm, t| {
                    if nm == name {
                        t.data_mut()[j] += delta;
                    }
                });
                m.loss(&batch, targets).unwrap()
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let a = g.data()[j];
            worst = worst.max((numeric - a).abs() / (a.abs() + 1e-3));
        }
    }
    worst
}

fn criterion_1() -> Line {
    let t0 = Instant::now();
    let mut worst_name = String::new();
    let mut worst = 0.0f64;
    for (name, e) in op_checks() {
        if e > worst || !e.is_finite() {
            worst = e;
            worst_name = name;
        }
    }
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 64,
        vocab_size: 257,
        context_length: 16,
        tie_embeddings: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut tokens = random_tokens(&mut rng, 12, 256);
    tokens[5] = EOT;
    let targets = random_tokens(&mut rng, 12, 257);

    let mut standard = GptModel::<f64>::init(cfg, 3).unwrap();
    perturb(&mut standard, 4, 0.05);
    let mut tied = GptModel::<f64>::init(ModelConfig { tie_embeddings: true, ..cfg }, 5).unwrap();
    perturb(&mut tied, 6, 0.05);
    let mut mixed = standard.clone();
    split_ln1(&mut mixed, 0).unwrap();
    split_ln1(&mut mixed, 1).unwrap();
    let sites = mixed.sites();
    for (i, site) in sites.iter().enumerate() {
        let st = mixed.norm_state_mut(*site).unwrap();
        st.sigma_bar = 0.8 + 0.1 * i as f64;
        st.sigma0_bar = 3.0;
        st.mode = match i % 3 {
            0 => NormMode::Standard,
            1 => NormMode::Frozen,
            _ => NormMode::Interpolating(0.4),
        };
        st.special_bos_active = st.mode != NormMode::Standard;
        st.special_eot_active = st.mode != NormMode::Standard && site.kind == lnabl::norm::SiteKind::Ln1v;
    }
    for (label, m) in [("model standard", &standard), ("model tied", &tied), ("model mixed modes", &mixed)] {
        let e = model_check(m, &tokens, &targets, 24, 9);
        if e > worst || !e.is_finite() {
            worst = e;
            worst_name = label.to_string();
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        "1 gradients",
        worst < 1e-4 && secs < 120.0,
        format!("max rel err {worst:.2e} ({worst_name}) < 1e-4, {secs:.1}s < 120s"),
    )
}

// ---------------------------------------------------------------- 2

fn frozen_toy(tie: bool, split: bool, seed: u64) -> GptModel<f64> {
    let cfg = ModelConfig {
        n_layers: 4,
        n_heads: 4,
        d_model: 64,
        d_ff: 256,
        vocab_size: 257,
        context_length: 64,
        tie_embeddings: tie,
    };
    let mut m = GptModel::<f64>::init(cfg, seed).unwrap();
    perturb(&mut m, seed + 1, 0.05);
    if split {
        for b in 0..4 {
            split_ln1(&mut m, b).unwrap();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    for site in m.sites() {
        let st = m.norm_state_mut(site).unwrap();
        st.mode = NormMode::Frozen;
        st.sigma_bar = rng.random_range(0.3..2.0);
        st.sigma0_bar = st.sigma_bar;
    }
    m
}

fn max_fold_gap<F: lnabl::numerics::Scalar>(frozen: &GptModel<F>, seqs: &[Vec<u16>]) -> f64 {
    let exported = fold_and_export(frozen).unwrap();
    assert!(exported.is_norm_free());
    seqs.iter()
        .map(|s| {
            let a = frozen.forward_sequence(s, EOT).unwrap();
            let b = exported.forward_sequence(s, EOT).unwrap();
            a.max_abs_diff(&b)
        })
        .fold(0.0, f64::max)
}

fn criterion_2() -> Line {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let seqs: Vec<Vec<u16>> = (0..100)
        .map(|_| {
            let len = rng.random_range(1..=64);
            random_tokens(&mut rng, len, 257)
        })
        .collect();
    let mut g32 = 0.0f64;
    let mut g64 = 0.0f64;
    for (i, (tie, split)) in [(false, true), (true, false)].into_iter().enumerate() {
        let m = frozen_toy(tie, split, 40 + 10 * i as u64);
        g64 = g64.max(max_fold_gap(&m, &seqs));
        g32 = g32.max(max_fold_gap(&m.cast::<f32>(), &seqs));
    }
    let secs = t0.elapsed().as_secs_f64();
    line(
        "2 fold equivalence",
        g32 < 1e-4 && g64 < 1e-8 && secs < 60.0,
        format!("f32 gap {g32:.2e} < 1e-4, f64 gap {g64:.2e} < 1e-8, {secs:.1}s < 60s"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Line {
    let mut m = GptModel::<f32>::init(ModelConfig::default(), 31).unwrap();
    perturb(&mut m, 32, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let seqs: Vec<Vec<u16>> = (0..100)
        .map(|_| {
            let len = rng.random_range(1..=48);
            random_tokens(&mut rng, len, 257)
        })
        .collect();
    let before: Vec<_> = seqs.iter().map(|s| m.forward_sequence(s, EOT).unwrap()).collect();
    for b in 0..m.config.n_layers {
        split_ln1(&mut m, b).unwrap();
    }
    let all_split = m.blocks.iter().all(|b| matches!(b.attn_norm, AttnNorm::Split { .. }));
    let gap = seqs
        .iter()
        .zip(&before)
        .map(|(s, a)| m.forward_sequence(s, EOT).unwrap().max_abs_diff(a))
        .fold(0.0, f64::max);
    line(
        "3 split invariance",
        all_split && gap < 1e-6,
        format!("max logit change {gap:.2e} < 1e-6 over 100 sequences"),
    )
}

// ---------------------------------------------------------------- 4

/// Expected `(step, site:action)` set of a bundled schedule, generated from
/// the removal-step table.
fn expected_events(version: usize) -> Vec<(u64, String)> {
    let step_of = |label: &str| {
        table1::TABLE
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, s)| s[version])
            .unwrap()
    };
    let mut out = Vec::new();
    for (label, steps) in table1::TABLE.iter() {
        let step = steps[version];
        if let Some(block) = label.strip_suffix(".eot") {
            out.push((step, format!("{block}.ln1v:drop_eot")));
        } else if let Some(block) = label.strip_suffix(".bos") {
            for kind in ["ln1qk", "ln1v", "ln2"] {
                let site = format!("{block}.{kind}");
                out.push((step.max(step_of(&site)), format!("{site}:drop_bos")));
            }
            if block == "0" {
                out.push((step.max(step_of("lnf")), "lnf:drop_bos".to_string()));
            }
        } else {
            out.push((step, format!("{label}:freeze")));
        }
    }
    out.sort();
    out
}

fn criterion_4() -> Line {
    let mut cells = 0;
    let mut bad = Vec::new();
    for (v, name) in ["v1", "v2", "v3", "v4", "v5"].iter().enumerate() {
        let s = RemovalSchedule::bundled(name).unwrap();
        let mut got: Vec<(u64, String)> = s.events().iter().map(|e| (e.step, e.label())).collect();
        got.sort();
        let want = expected_events(v);
        cells += table1::TABLE.len();
        if got != want {
            let missing = want.iter().filter(|w| !got.contains(w)).count();
            let extra = got.iter().filter(|g| !want.contains(g)).count();
            bad.push(format!("{name}: {missing} missing, {extra} extra"));
        }
    }
    let spot = |name: &str, label: &str| {
        RemovalSchedule::bundled(name)
            .unwrap()
            .events()
            .iter()
            .find(|e| e.label() == label)
            .map(|e| e.step)
    };
    let spots = spot("v2", "lnf:freeze") == Some(400)
        && spot("v4", "0.ln2:freeze") == Some(200)
        && spot("v5", "11.ln1v:drop_bos") == Some(975);
    line(
        "4 schedule fidelity",
        bad.is_empty() && spots,
        if bad.is_empty() {
            format!("{cells} table cells reproduced, spot checks {}", if spots { "ok" } else { "wrong" })
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Line {
    let lr = LrConfig::default();
    let bound = lr.base_lr / 100.0;
    let exact = lr.lr_at(100) == 6e-4 && lr.lr_at(2000) == 6e-5;
    let joints = [(100u64, 101u64), (1999, 2000)];
    let worst = joints
        .iter()
        .map(|&(a, b)| (lr.lr_at(b) - lr.lr_at(a)).abs())
        .fold(0.0, f64::max);
    // inside the warmup the slope is exactly base_lr / 100
    let inner = (1..=100u64).all(|s| (lr.lr_at(s) - lr.lr_at(s - 1)).abs() <= bound * (1.0 + 1e-12));
    let post = worst < bound;
    line(
        "5 lr schedule",
        exact && inner && post,
        format!(
            "lr(100)={:e} lr(2000)={:e}, largest joint step {worst:.3e} vs bound {bound:e}",
            lr.lr_at(100),
            lr.lr_at(2000)
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Line {
    let t = TrainConfig::large().tokens_per_step();
    line("6 token accounting", t == 491_520, format!("large preset tokens per step = {t}"))
}

// ---------------------------------------------------------------- 7

const E2E_PRETRAIN_STEPS: u64 = 600;
const E2E_FINETUNE_STEPS: u64 = 300;

fn e2e_config(out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig {
        corpus: vec!["synthetic".into()],
        synthetic_bytes: 2_500_000,
        out: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.train.save_step_checkpoints = false;
    cfg.train.eval_every = 50;
    cfg
}

struct FreezeJump {
    step: u64,
    site: String,
    loss: f64,
    trailing: f64,
    jumped: bool,
    /// First step before the next event whose loss is back below
    /// `trailing + 0.05`.
    recovered_at: Option<u64>,
    next_event: u64,
}

/// Loss jumps at freeze events and their recovery, from per-step train loss.
fn analyse_jumps(records: &[MetricsRecord]) -> Vec<FreezeJump> {
    let loss: BTreeMap<u64, f64> = records.iter().map(|r| (r.step, r.train_loss)).collect();
    let event_steps: Vec<u64> = records.iter().filter(|r| !r.events.is_empty()).map(|r| r.step).collect();
    let last = records.last().map_or(0, |r| r.step);
    let mut out = Vec::new();
    for r in records {
        let Some(ev) = r.events.iter().find(|e| e.ends_with(":freeze")) else {
            continue;
        };
        let trailing: Vec<f64> = (r.step.saturating_sub(10)..r.step).filter_map(|s| loss.get(&s).copied()).collect();
        if trailing.is_empty() {
            continue;
        }
        let mean = trailing.iter().sum::<f64>() / trailing.len() as f64;
        let next_event = event_steps.iter().copied().find(|&s| s > r.step).unwrap_or(last + 1);
        out.push(FreezeJump {
            step: r.step,
            site: ev.trim_end_matches(":freeze").to_string(),
            loss: r.train_loss,
            trailing: mean,
            jumped: r.train_loss > mean + 0.02,
            recovered_at: (r.step + 1..next_event).find(|s| loss.get(s).is_some_and(|&l| l < mean + 0.05)),
            next_event,
        });
    }
    out
}

fn criterion_7() -> Line {
    if std::env::var_os("LNABL_ACCEPT_SKIP_E2E").is_some() {
        println!("SKIP [7 end-to-end] LNABL_ACCEPT_SKIP_E2E is set");
        return Line {
            id: "7 end-to-end",
            pass: true,
        };
    }
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    let mut pre_cfg = e2e_config(&dir.path().join("pretrain"));
    pre_cfg.train.total_steps = E2E_PRETRAIN_STEPS;
    pre_cfg.train.lr.decay_end_step = E2E_PRETRAIN_STEPS;
    pre_cfg.train.eval_every = 100;
    let pre = cmd_pretrain::<f32>(&pre_cfg).unwrap();
    let corpus: Corpus = load_run_corpus(&pre_cfg).unwrap();
    let base: GptModel<f32> = lnabl::model::load_checkpoint(pre.dir.join("final.ckpt")).unwrap();
    let l0 = pre.final_val.unwrap_or(f64::NAN);
    println!("     pretrain: {} steps, L0 = {l0:.4}, {:.0}s", E2E_PRETRAIN_STEPS, t0.elapsed().as_secs_f64());

    let finetune = |name: &str, schedule: &str, scale: f64| {
        let mut cfg = e2e_config(&dir.path().join(name));
        cfg.train.total_steps = E2E_FINETUNE_STEPS;
        cfg.train.lr.decay_end_step = E2E_FINETUNE_STEPS;
        cfg.train.lr.warmup_steps = 10;
        cfg.schedule = Some(schedule.into());
        cfg.scale = scale;
        let mut m = base.clone();
        remove_ln_with(&cfg, &corpus, &mut m).unwrap()
    };
    let vanilla = finetune("vanilla", "none", 1.0);
    let lv = vanilla.final_val;
    let noln = finetune("noln", "v5", 0.25);
    let secs = t0.elapsed().as_secs_f64();

    let freezes = analyse_jumps(&noln.outcome.metrics);
    for f in &freezes {
        println!(
            "     freeze {:>4} {:<8} loss {:.4} trailing {:.4} {} {}",
            f.step,
            f.site,
            f.loss,
            f.trailing,
            if f.jumped { "jump" } else { "    " },
            match f.recovered_at {
                Some(s) => format!("recovered at {s}"),
                None => format!("not recovered before {}", f.next_event),
            }
        );
    }
    let jumps: Vec<&FreezeJump> = freezes.iter().filter(|f| f.jumped).collect();
    let recovered = jumps.iter().filter(|f| f.recovered_at.is_some()).count();
    let exported = noln.exported_val;
    let lnfree = exported.unwrap_or(f64::NAN);
    let gap = (lnfree - noln.final_val).abs();
    let a = jumps.len() >= 3;
    let b = !jumps.is_empty() && recovered == jumps.len();
    let c = lnfree <= lv + 0.10;
    let d = gap < 2e-4;
    println!(
        "     (a) {} jumps at {} freezes {}",
        jumps.len(),
        freezes.len(),
        if a { "ok" } else { "FAIL" }
    );
    println!("     (b) {recovered}/{} recovered {}", jumps.len(), if b { "ok" } else { "FAIL" });
    println!(
        "     (c) LN-free val {lnfree:.4} vs vanilla {lv:.4} + 0.10 {}",
        if c { "ok" } else { "FAIL" }
    );
    println!("     (d) export gap {gap:.2e} < 2e-4 {}", if d { "ok" } else { "FAIL" });
    line(
        "7 end-to-end",
        a && b && c && d,
        format!("L0 {l0:.4}, vanilla {lv:.4}, LN-free {lnfree:.4}, {secs:.0}s"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Vec<Line> {
    let mut out = Vec::new();

    // constant rows: sigma = 0 is clamped, output is beta, gradients finite
    let mut st = NormState::<f64>::new(5);
    st.beta = Tensor::from_f64(&[5], &[0.1, -0.2, 0.3, 0.0, 0.5]).unwrap();
    let x = Tensor::<f64>::full(&[3, 5], 2.5);
    let flags = vec![TokenFlags::default(); 3];
    let y = norm_forward(&x, &st, &flags).unwrap();
    let beta_ok = (0..3).all(|r| y.row(r).iter().zip(st.beta.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    let mut tape = Tape::<f64>::new();
    let xv = tape.param(x.clone());
    let g = tape.param(st.gamma.clone());
    let b = tape.param(st.beta.clone());
    let yv = norm_on_tape(&mut tape, xv, g, b, &st, &flags).unwrap();
    let s = tape.sum(yv);
    let grads = tape.backward(s).unwrap();
    let finite = grads.get(xv).is_none_or(|t| t.all_finite()) && grads.get(g).is_none_or(|t| t.all_finite());
    let zero_model = {
        let mut m = GptModel::<f32>::init(ModelConfig::default(), 1).unwrap();
        m.visit_params_mut(|_, t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        m.forward_sequence(&[5, 5, 5, 5], EOT).unwrap().all_finite()
    };
    out.push(line(
        "8a degenerate inputs",
        beta_ok && finite && zero_model,
        "constant rows map to beta with finite gradients; all-zero model gives finite logits",
    ));

    // checkpoint and corpus formats
    let mut m = frozen_toy(false, true, 70);
    m.norm_state_mut(NormSiteId::LNF).unwrap().special_bos_active = true;
    let bytes = encode(&m);
    let back: GptModel<f64> = decode(&bytes).unwrap();
    let ckpt_ok = back == m && encode(&back) == bytes;
    let m32 = m.cast::<f32>();
    let b32 = encode(&m32);
    let ckpt32_ok = encode(&decode::<f32>(&b32).unwrap()) == b32;
    let docs: Vec<Vec<u8>> = (0..20).map(|i| format!("document {i} text\n").into_bytes()).collect();
    let corpus = Corpus::from_documents(docs, 0.1, 3, vec![[7u8; 32]]).unwrap();
    let enc = corpus.encode();
    let corpus_ok = Corpus::decode(&enc).is_ok_and(|c| c.encode() == enc && c.digest() == corpus.digest());
    out.push(line(
        "8b format round trips",
        ckpt_ok && ckpt32_ok && corpus_ok,
        format!("checkpoint f64 {ckpt_ok}, f32 {ckpt32_ok}, corpus {corpus_ok}"),
    ));

    // determinism of reruns
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 32,
        d_ff: 64,
        vocab_size: 257,
        context_length: 32,
        tie_embeddings: false,
    };
    let text = lnabl::data::synthetic_corpus(60_000, 2);
    let docs: Vec<Vec<u8>> = lnabl::data::split_documents(text.as_bytes()).into_iter().map(|d| d.to_vec()).collect();
    let corpus = Corpus::from_documents(docs, 0.1, 0, Vec::new()).unwrap();
    let tc = TrainConfig {
        micro_batch_size: 4,
        seq_len: 32,
        total_steps: 12,
        eval_every: 6,
        eval_tokens: 512,
        sigma_prompts: 4,
        ..TrainConfig::default()
    };
    let schedule = RemovalSchedule::parse("t", "4\t0.ln2\tfreeze\n8\t0.ln2\tdrop_bos\n").unwrap();
    let run = || {
        let mut m = GptModel::<f32>::init(cfg, 9).unwrap();
        let o = train_loop(&mut m, &corpus, &schedule, None, &tc, &mut NoHooks).unwrap();
        (o.metrics, encode(&m))
    };
    let (ma, pa) = run();
    let (mb, pb) = run();
    out.push(line(
        "8c determinism",
        ma == mb && pa == pb,
        format!("{} steps rerun: identical metrics {} and weights {}", ma.len(), ma == mb, pa == pb),
    ));
    out
}

fn main() -> ExitCode {
    let mut lines = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
    ];
    lines.extend(criterion_8());
    lines.push(criterion_7());
    let failed: Vec<&str> = lines.iter().filter(|l| !l.pass).map(|l| l.id).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        lines.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
