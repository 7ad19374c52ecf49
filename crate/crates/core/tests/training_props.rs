//! Trainer and model behaviour: reproducibility, divergence handling,
//! checkpoint integrity, and the temporal sensitivity the temporal
//! convolution is there to provide.

mod common;

use std::fs;
use std::path::PathBuf;

use vad_core::backbone::{Model, ModelConfig};
use vad_core::data::synthetic::{generate_synthetic, AnomalyKind, SyntheticSpec};
use vad_core::data::{read_checkpoint, Split};
use vad_core::graph::Graph;
use vad_core::harness::{evaluate, model_from_checkpoint, train, RunConfig, TrainOutcome};
use vad_core::tensor::Tensor;
use vad_core::Error;

fn fresh_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "vad-train-{tag}-{}-{}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY_SHAPE: [usize; 4] = [12, 4, 4, 4];

fn tiny_dataset(dir: &PathBuf, split: Split, n: usize) -> PathBuf {
    let spec = SyntheticSpec {
        n_normal: n,
        n_abnormal: n,
        shape: TINY_SHAPE,
        seed: 31,
        kind: AnomalyKind::ReversedMotion,
        split,
    };
    generate_synthetic(&spec, dir).unwrap();
    dir.join("manifest.tsv")
}

fn tiny_run_config(manifest: PathBuf, out_dir: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("enhancer_channels", "8"),
        ("attention_channels", "8"),
        ("random_features", "16"),
        ("input_shape", "12x4x4x4"),
        ("batch_half", "2"),
        ("epochs", "2"),
        ("checkpoint_every", "2"),
    ] {
        cfg.apply(k, v).unwrap();
    }
    cfg.manifest = Some(manifest);
    cfg.out_dir = Some(out_dir);
    cfg
}

fn run_tiny(tag: &str) -> (TrainOutcome, PathBuf, PathBuf) {
    let data_dir = fresh_dir(&format!("{tag}-data"));
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let out = fresh_dir(&format!("{tag}-out"));
    let cfg = tiny_run_config(manifest.clone(), out.clone());
    let outcome = train(&cfg).unwrap();
    (outcome, manifest, out)
}

#[test]
fn identical_seeds_give_identical_logs_and_checkpoints() {
    let data_dir = fresh_dir("det-data");
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let (out_a, out_b) = (fresh_dir("det-a"), fresh_dir("det-b"));
    let a = train(&tiny_run_config(manifest.clone(), out_a.clone())).unwrap();
    let b = train(&tiny_run_config(manifest, out_b.clone())).unwrap();
    let log_a = fs::read(a.log).unwrap();
    let log_b = fs::read(b.log).unwrap();
    assert_eq!(log_a, log_b, "training logs differ");
    let ck_a = fs::read(a.checkpoint).unwrap();
    let ck_b = fs::read(b.checkpoint).unwrap();
    assert_eq!(ck_a, ck_b, "checkpoints differ");
    for d in [data_dir, out_a, out_b] {
        fs::remove_dir_all(d).ok();
    }
}

#[test]
fn different_data_seed_changes_the_log() {
    let data_dir = fresh_dir("seed-data");
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let (out_a, out_b) = (fresh_dir("seed-a"), fresh_dir("seed-b"));
    let a = train(&tiny_run_config(manifest.clone(), out_a.clone())).unwrap();
    let mut cfg = tiny_run_config(manifest, out_b.clone());
    cfg.apply("data_seed", "999").unwrap();
    let b = train(&cfg).unwrap();
    assert_ne!(fs::read(a.log).unwrap(), fs::read(b.log).unwrap());
    for d in [data_dir, out_a, out_b] {
        fs::remove_dir_all(d).ok();
    }
}

#[test]
fn evaluation_reproduces_final_train_auc() {
    let (outcome, manifest, out) = run_tiny("evalrt");
    let eval = evaluate(&outcome.checkpoint, &manifest).unwrap();
    assert!(
        (eval.auc - outcome.final_train_auc).abs() < 1e-6,
        "eval {} vs trained {}",
        eval.auc,
        outcome.final_train_auc
    );
    assert_eq!(eval.rows.len(), 12);
    fs::remove_dir_all(manifest.parent().unwrap()).ok();
    fs::remove_dir_all(out).ok();
}

#[test]
fn checkpoint_carries_optimizer_state_and_cadence_files_exist() {
    let (outcome, manifest, out) = run_tiny("ckpt");
    // 2 epochs x 3 batches = 6 steps; cadence 2 -> checkpoints at 2, 4, 6
    for step in [2u64, 4, 6] {
        assert!(
            out.join(format!("checkpoint-{step}.stck")).is_file(),
            "missing cadence checkpoint at step {step}"
        );
    }
    let ck = read_checkpoint(&outcome.checkpoint).unwrap();
    let (model, _, opt) = model_from_checkpoint(&ck).unwrap();
    let opt = opt.expect("optimizer state in checkpoint");
    assert_eq!(opt.step, outcome.steps);
    assert_eq!(opt.m.len(), model.params.len());
    for (m, p) in opt.m.iter().zip(model.params.tensors()) {
        assert_eq!(m.shape(), p.shape());
    }
    fs::remove_dir_all(manifest.parent().unwrap()).ok();
    fs::remove_dir_all(out).ok();
}

#[test]
fn lambda_zero_reports_triplet_but_combined_equals_bce() {
    let data_dir = fresh_dir("lz-data");
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let out = fresh_dir("lz-out");
    let mut cfg = tiny_run_config(manifest, out.clone());
    cfg.apply("lambda", "0").unwrap();
    let outcome = train(&cfg).unwrap();
    let log = fs::read_to_string(outcome.log).unwrap();
    let mut rows = 0;
    for line in log.lines().skip(1) {
        let cols: Vec<f64> = line
            .split(',')
            .skip(2)
            .map(|v| v.parse().unwrap())
            .collect();
        let (bce, triplet, combined) = (cols[0], cols[1], cols[2]);
        assert!(triplet > 0.0, "triplet still reported under lambda = 0");
        assert_eq!(combined, bce, "combined must equal bce exactly");
        rows += 1;
    }
    assert_eq!(rows, 6);
    fs::remove_dir_all(data_dir).ok();
    fs::remove_dir_all(out).ok();
}

#[test]
fn divergent_step_aborts_without_writing_a_final_checkpoint() {
    let data_dir = fresh_dir("div-data");
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let out = fresh_dir("div-out");
    let mut cfg = tiny_run_config(manifest, out.clone());
    // f32 overflow in the very first update
    cfg.apply("lr", "1e39").unwrap();
    cfg.apply("checkpoint_every", "1").unwrap();
    match train(&cfg) {
        Err(Error::NonFinite(msg)) => {
            assert!(msg.contains("step 0"), "{msg}");
            assert!(msg.contains("retained"), "{msg}");
        }
        other => panic!("expected divergence abort, got {other:?}"),
    }
    assert!(
        !out.join("checkpoint.stck").exists(),
        "aborted run must not write a final checkpoint"
    );
    assert!(
        !out.join("checkpoint-1.stck").exists(),
        "diverged step must not be checkpointed"
    );
    fs::remove_dir_all(data_dir).ok();
    fs::remove_dir_all(out).ok();
}

#[test]
fn early_stop_on_eval_auc() {
    let data_dir = fresh_dir("es-data");
    let manifest = tiny_dataset(&data_dir, Split::Train, 6);
    let eval_dir = fresh_dir("es-eval");
    let eval_manifest = tiny_dataset(&eval_dir, Split::Test, 4);
    let out = fresh_dir("es-out");
    let mut cfg = tiny_run_config(manifest, out.clone());
    cfg.apply("epochs", "40").unwrap();
    cfg.eval_manifest = Some(eval_manifest);
    cfg.eval_every = 1;
    cfg.stop_auc = 0.9;
    let outcome = train(&cfg).unwrap();
    assert!(
        outcome.stopped_early,
        "expected early stop on this easy fixture"
    );
    assert!(outcome.final_eval_auc.unwrap() >= 0.9);
    assert!(outcome.epochs_run < 40);
    for d in [data_dir, eval_dir, out] {
        fs::remove_dir_all(d).ok();
    }
}

#[test]
fn embeddings_sense_frame_order_through_asymmetric_temporal_kernels() {
    // Frames with identical unordered content but different order must map to
    // different embeddings once a temporal kernel is asymmetric. Constructed
    // kernel, not a trained one.
    let cfg = ModelConfig {
        enhancer_channels: 6,
        enhancer_depth: 1,
        attention_channels: 6,
        attention_depth: 1,
        random_features: 8,
        input_shape: [6, 4, 3, 3],
        ffn_expansion: 1.0,
        seed: 71,
    };
    let mut model = Model::<f64>::init(cfg, 72).unwrap();
    let kshape = model
        .params
        .get("enhancer.0.conv_temporal.weight")
        .unwrap()
        .shape()
        .to_vec();
    // temporal difference kernel [1, 0, -1] on the diagonal channel pairs
    let k = kshape[2];
    let asym = Tensor::from_fn(&kshape, |i| {
        let dt = i % k;
        let ci = (i / k) % kshape[1];
        let co = i / (k * kshape[1]);
        if ci == co {
            match dt {
                0 => 1.0,
                _ if dt == k - 1 => -1.0,
                _ => 0.0,
            }
        } else {
            0.0
        }
    });
    model
        .params
        .set("enhancer.0.conv_temporal.weight", asym)
        .unwrap();

    // frame t scales a fixed channel pattern by v[t] (mixed signs so the
    // per-site channel normalization keeps frame identity); permuting v
    // permutes whole frames without changing their unordered content
    let values = [0.5, -1.0, 1.5, 0.25];
    let clip_with_order = |order: &[usize]| {
        Tensor::<f64>::from_fn(&[6, 4, 3, 3], |i| {
            let c = i / (4 * 9);
            let t = (i / 9) % 4;
            values[order[t]] * (1.0 + 0.5 * c as f64)
        })
    };
    let (e_fwd, _) = model.forward(&clip_with_order(&[0, 1, 2, 3])).unwrap();
    let (e_rev, _) = model.forward(&clip_with_order(&[3, 2, 1, 0])).unwrap();
    let e_fwd = vad_core::backbone::Embedding::new(e_fwd.values).unwrap();
    let e_rev = vad_core::backbone::Embedding::new(e_rev.values).unwrap();
    let dist = e_fwd.distance(&e_rev);
    assert!(
        dist > 1e-3,
        "embeddings too close under frame reorder: {dist}"
    );
}

#[test]
fn trainer_matches_single_graph_batch_gradients() {
    // The staged trunk/head pipeline must compute the same gradients as one
    // monolithic graph over the whole batch (up to f64 accumulation order).
    use vad_core::losses::{combined_loss_nodes, LossConfig};

    let cfg = ModelConfig {
        enhancer_channels: 4,
        enhancer_depth: 1,
        attention_channels: 4,
        attention_depth: 1,
        random_features: 8,
        input_shape: [4, 3, 3, 3],
        ffn_expansion: 1.0,
        seed: 81,
    };
    let model = Model::<f64>::init(cfg.clone(), 82).unwrap();
    let n = 2;
    let clips: Vec<Tensor<f64>> = (0..2 * n)
        .map(|i| common::uniform_tensor(&cfg.input_shape, 83 + i as u64))
        .collect();
    let labels = [0.0, 0.0, 1.0, 1.0];
    let loss_cfg = LossConfig {
        margin: 2.0,
        lambda: 0.8,
        batch_half: n,
    };

    // route 1: one graph holding the entire batch
    let mono = {
        let mut g = Graph::<f64>::new();
        let leaves = model.param_leaves(&mut g);
        let mut embs = Vec::new();
        let mut logits = Vec::new();
        let w = leaves[model.params.index_of("classifier.weight").unwrap()];
        let b = leaves[model.params.index_of("classifier.bias").unwrap()];
        for clip in &clips {
            let input = g.constant(clip.clone());
            let emb = model.trunk_forward(&mut g, &leaves, input).unwrap();
            let logit = model.head_logit(&mut g, w, b, emb).unwrap();
            logits.push(g.reshape(logit, &[1]).unwrap());
            embs.push(emb);
        }
        let stacked = g.concat_rows(&logits).unwrap();
        let flat = g.reshape(stacked, &[2 * n]).unwrap();
        let scores = g.sigmoid(flat);
        let normals = g.concat_rows(&embs[..n]).unwrap();
        let abnormals = g.concat_rows(&embs[n..]).unwrap();
        let nodes =
            combined_loss_nodes(&mut g, scores, &labels, normals, abnormals, &loss_cfg).unwrap();
        let grads = g.backward(nodes.combined).unwrap();
        leaves
            .iter()
            .map(|&l| grads.get(l).cloned())
            .collect::<Vec<_>>()
    };

    // route 2: the trainer's staged decomposition
    let staged = {
        let mut trunk_graphs = Vec::new();
        for clip in &clips {
            let mut g = Graph::<f64>::new();
            let leaves = model.param_leaves(&mut g);
            let input = g.constant(clip.clone());
            let emb = model.trunk_forward(&mut g, &leaves, input).unwrap();
            trunk_graphs.push((g, leaves, emb));
        }
        let mut hg = Graph::<f64>::new();
        let emb_leaves: Vec<_> = trunk_graphs
            .iter()
            .map(|(g, _, emb)| hg.param(g.value(*emb).clone()))
            .collect();
        let w = hg.param(model.params.get("classifier.weight").unwrap().clone());
        let b = hg.param(model.params.get("classifier.bias").unwrap().clone());
        let mut logits = Vec::new();
        for &e in &emb_leaves {
            let logit = model.head_logit(&mut hg, w, b, e).unwrap();
            logits.push(hg.reshape(logit, &[1]).unwrap());
        }
        let stacked = hg.concat_rows(&logits).unwrap();
        let flat = hg.reshape(stacked, &[2 * n]).unwrap();
        let scores = hg.sigmoid(flat);
        let normals = hg.concat_rows(&emb_leaves[..n]).unwrap();
        let abnormals = hg.concat_rows(&emb_leaves[n..]).unwrap();
        let nodes =
            combined_loss_nodes(&mut hg, scores, &labels, normals, abnormals, &loss_cfg).unwrap();
        let hgrads = hg.backward(nodes.combined).unwrap();

        let mut acc: Vec<Option<Tensor<f64>>> = vec![None; model.params.len()];
        for ((g, leaves, emb), &el) in trunk_graphs.iter().zip(&emb_leaves) {
            let seed = hgrads.get(el).unwrap().clone();
            let grads = g.backward_seeded(*emb, seed).unwrap();
            for (slot, &l) in acc.iter_mut().zip(leaves) {
                if let Some(gt) = grads.get(l) {
                    match slot {
                        Some(s) => s.add_assign(gt).unwrap(),
                        None => *slot = Some(gt.clone()),
                    }
                }
            }
        }
        let iw = model.params.index_of("classifier.weight").unwrap();
        let ib = model.params.index_of("classifier.bias").unwrap();
        acc[iw] = hgrads.get(w).cloned();
        acc[ib] = hgrads.get(b).cloned();
        acc
    };

    for (i, name) in model.params.names().iter().enumerate() {
        match (&mono[i], &staged[i]) {
            (Some(a), Some(b)) => {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!(
                        (x - y).abs() < 1e-9 * x.abs().max(1.0),
                        "{name}: {x} vs {y}"
                    );
                }
            }
            (None, None) => {}
            other => panic!("{name}: gradient presence mismatch {other:?}"),
        }
    }
}
