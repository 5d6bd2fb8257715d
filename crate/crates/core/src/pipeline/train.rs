//! Stage trainers: beat poses first, then the adversarial repletion stage
//! conditioned on the frozen beat generator's outputs, then the root
//! trajectory on detached generated poses.
//!
//! All randomness flows from one seeded generator per run; saving a
//! checkpoint rounds the live state to the checkpoint's f32 precision, so
//! a resumed run continues bit-identically to an uninterrupted one.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bps::{bps_forward, BpsConfig, BpsInput, BpsModel};
use crate::dataset::TrainingSample;
use crate::error::{Error, Result};
use crate::losses::{
    adversarial_disc_loss_t, adversarial_gen_loss_t, leg_bone_pairs, leg_motion_loss_t,
    min_abs_cossim_peer, pose_motion_loss_t, root_translation_loss_t, rtc_loss_t,
    select_contrast_segment, DistanceKind, SegmentPlan,
};
use crate::netcore::{Adam, Binder, Checkpoint, ParamStore, Tape, Var};
use crate::pipeline::config::{PipelineConfig, StageConfig};
use crate::rps::{
    draw_noise, rps_generate, RpsConfig, RpsDiscriminator, RpsGenerator, RpsInput,
    TrajectoryConfig, TrajectoryPredictor,
};
use crate::skeleton::SkeletonTopology;

// ----------------------------------------------------------- checkpoint IO

fn save_stage(
    path: &Path,
    store: &mut ParamStore,
    adam: &mut Adam,
    rng: &ChaCha8Rng,
    mut configs: serde_json::Value,
    completed_epochs: usize,
) -> Result<()> {
    store.round_to_f32();
    adam.round_to_f32();
    configs["completed_epochs"] = serde_json::json!(completed_epochs);
    let mut arrays = BTreeMap::new();
    for (name, value) in store.iter() {
        arrays.insert(format!("param.{name}"), value.clone());
    }
    arrays.extend(adam.state_arrays());
    let ck = Checkpoint {
        configs,
        step: adam.step_count(),
        rng_seed: rng.get_seed(),
        rng_word_pos: rng.get_word_pos(),
        arrays,
    };
    ck.save(path)
}

struct LoadedStage {
    configs: serde_json::Value,
    completed_epochs: usize,
    step: u64,
    params: BTreeMap<String, Array2<f64>>,
    adam_arrays: BTreeMap<String, Array2<f64>>,
    rng: ChaCha8Rng,
}

fn load_stage(path: &Path) -> Result<LoadedStage> {
    let ck = Checkpoint::load(path)?;
    let mut params = BTreeMap::new();
    let mut adam_arrays = BTreeMap::new();
    for (key, value) in ck.arrays {
        if let Some(name) = key.strip_prefix("param.") {
            params.insert(name.to_string(), value);
        } else {
            adam_arrays.insert(key, value);
        }
    }
    let mut rng = ChaCha8Rng::from_seed(ck.rng_seed);
    rng.set_word_pos(ck.rng_word_pos);
    let completed_epochs = ck.configs["completed_epochs"].as_u64().unwrap_or(0) as usize;
    Ok(LoadedStage {
        configs: ck.configs,
        completed_epochs,
        step: ck.step,
        params,
        adam_arrays,
        rng,
    })
}

/// Replaces a freshly initialized store's values with checkpoint params,
/// requiring the exact same parameter set.
fn restore_params(store: &mut ParamStore, params: &BTreeMap<String, Array2<f64>>) -> Result<()> {
    let expected: Vec<String> = store.names().cloned().collect();
    if expected.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "parameter count mismatch: model has {}, checkpoint has {}",
            expected.len(),
            params.len()
        )));
    }
    for name in expected {
        let value = params
            .get(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if value.dim() != store.get(&name).dim() {
            return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
        }
        *store.get_mut(&name) = value.clone();
    }
    Ok(())
}

fn stage_config_json<T: serde::Serialize>(stage: &str, model: &T, train: &StageConfig) -> serde_json::Value {
    serde_json::json!({
        "stage": stage,
        "model": serde_json::to_value(model).expect("model config serializes"),
        "train": serde_json::to_value(train).expect("stage config serializes"),
    })
}

fn model_config_from<T: serde::de::DeserializeOwned>(configs: &serde_json::Value) -> Result<T> {
    serde_json::from_value(configs["model"].clone())
        .map_err(|e| Error::Checkpoint(format!("bad model config in checkpoint: {e}")))
}

/// Loads a frozen beat-pose model from its checkpoint.
pub fn load_bps_model(path: &Path, topo: &SkeletonTopology) -> Result<(BpsModel, ParamStore)> {
    let loaded = load_stage(path)?;
    let cfg: BpsConfig = model_config_from(&loaded.configs)?;
    let model = BpsModel::new(cfg, topo)?;
    let mut store = ParamStore::new();
    let mut rng0 = ChaCha8Rng::seed_from_u64(0);
    model.init(&mut store, &mut rng0);
    restore_params(&mut store, &loaded.params)?;
    Ok((model, store))
}

/// Loads a frozen repletion generator from its checkpoint.
pub fn load_rps_generator(path: &Path, topo: &SkeletonTopology) -> Result<(RpsGenerator, ParamStore)> {
    let loaded = load_stage(path)?;
    let cfg: RpsConfig = model_config_from(&loaded.configs)?;
    let model = RpsGenerator::new(cfg, topo)?;
    let mut store = ParamStore::new();
    let mut rng0 = ChaCha8Rng::seed_from_u64(0);
    model.init(&mut store, &mut rng0);
    restore_params(&mut store, &loaded.params)?;
    Ok((model, store))
}

/// Loads a frozen discriminator from its checkpoint.
pub fn load_rps_discriminator(
    path: &Path,
    topo: &SkeletonTopology,
) -> Result<(RpsDiscriminator, ParamStore)> {
    let loaded = load_stage(path)?;
    let cfg: RpsConfig = model_config_from(&loaded.configs)?;
    let model = RpsDiscriminator::new(cfg, topo)?;
    let mut store = ParamStore::new();
    let mut rng0 = ChaCha8Rng::seed_from_u64(0);
    model.init(&mut store, &mut rng0);
    restore_params(&mut store, &loaded.params)?;
    Ok((model, store))
}

/// Loads a frozen trajectory predictor from its checkpoint.
pub fn load_trajectory(path: &Path, topo: &SkeletonTopology) -> Result<(TrajectoryPredictor, ParamStore)> {
    let loaded = load_stage(path)?;
    let cfg: TrajectoryConfig = model_config_from(&loaded.configs)?;
    let model = TrajectoryPredictor::new(cfg, topo)?;
    let mut store = ParamStore::new();
    let mut rng0 = ChaCha8Rng::seed_from_u64(0);
    model.init(&mut store, &mut rng0);
    restore_params(&mut store, &loaded.params)?;
    Ok((model, store))
}

// ------------------------------------------------------------- shared bits

fn mean_of(t: &Tape, vars: &[Var]) -> Var {
    t.mean_all(t.concat_rows(vars))
}

fn check_finite(value: f64, context: &str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss(context.to_string()))
    }
}

fn require_samples(samples: &[TrainingSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::ManifestError("no training samples (empty dataset)".into()));
    }
    Ok(())
}

// -------------------------------------------------------------- beat stage

#[derive(Debug, Clone, serde::Serialize)]
pub struct BpsEpochLog {
    pub epoch: usize,
    pub pose_motion: f64,
    pub leg_motion: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct BpsTrainReport {
    pub epochs: Vec<BpsEpochLog>,
    pub skipped_samples: usize,
}

/// Trains the beat-pose generator, minimizing the beat-stage total loss
/// over the non-seed beat poses. Deterministic given the config seed.
pub fn train_bps(
    cfg: &PipelineConfig,
    samples: &[TrainingSample],
    topo: &SkeletonTopology,
    out: &Path,
    resume: Option<&Path>,
) -> Result<BpsTrainReport> {
    require_samples(samples)?;
    let stage = &cfg.train.bps;
    let model_cfg = cfg.model.bps();
    let model = BpsModel::new(model_cfg.clone(), topo)?;
    let mut store = ParamStore::new();
    let mut adam = Adam::new(stage.lr, stage.beta1, stage.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start_epoch = 0usize;
    model.init(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    if let Some(resume_path) = resume {
        let loaded = load_stage(resume_path)?;
        let stored_cfg: BpsConfig = model_config_from(&loaded.configs)?;
        if stored_cfg != model_cfg {
            return Err(Error::Checkpoint("resume model config differs".into()));
        }
        restore_params(&mut store, &loaded.params)?;
        adam.restore(loaded.step, &loaded.adam_arrays);
        rng = loaded.rng;
        start_epoch = loaded.completed_epochs;
    }

    let pairs = leg_bone_pairs(topo);
    let mut inputs = Vec::new();
    let mut skipped = 0usize;
    for s in samples {
        let input = BpsInput::build(&s.feats, &s.sets, &s.seed_poses(), topo.num_bones())?;
        if input.gen_columns.is_empty() {
            skipped += 1;
            continue;
        }
        let gt = crate::bps::gather_gt_beat_matrix(&s.pose.line_vectors, &s.sets);
        inputs.push((input, gt));
    }
    if inputs.is_empty() {
        return Err(Error::ManifestError(
            "every sample has only seed beats; nothing to train".into(),
        ));
    }

    let weights = &cfg.loss.weights();
    let mut epochs = Vec::new();
    for epoch in start_epoch..stage.epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut rng);
        let mut pm_sum = 0.0;
        let mut lm_sum = 0.0;
        let mut count = 0.0;
        for (batch_id, batch) in order.chunks(stage.batch_size).enumerate() {
            let tape = Tape::new();
            let binder = Binder::new(&tape, &store);
            let mut pm_terms = Vec::new();
            let mut lm_terms = Vec::new();
            for &i in batch {
                let (input, gt) = &inputs[i];
                let full = model.forward_t(&binder, input);
                let pred = tape.gather_cols(full, &input.gen_columns);
                let gt_var = binder.constant(gt.clone());
                pm_terms.push(pose_motion_loss_t(&tape, gt_var, pred, DistanceKind::Mse, weights));
                lm_terms.push(leg_motion_loss_t(&tape, gt_var, pred, &pairs));
            }
            let pm = mean_of(&tape, &pm_terms);
            let lm = mean_of(&tape, &lm_terms);
            let total = tape.add(tape.scale(pm, weights.lambda_pm), tape.scale(lm, weights.lambda_lm));
            let total_val = tape.scalar(total);
            check_finite(total_val, &format!("bps epoch {epoch} batch {batch_id}"))?;
            let grads = tape.backward(total);
            let grad_map = binder.collect_grads(&grads);
            adam.step(&mut store, &grad_map);
            pm_sum += tape.scalar(pm) * batch.len() as f64;
            lm_sum += tape.scalar(lm) * batch.len() as f64;
            count += batch.len() as f64;
        }
        let pose_motion = pm_sum / count;
        let leg_motion = lm_sum / count;
        epochs.push(BpsEpochLog {
            epoch,
            pose_motion,
            leg_motion,
            total: weights.lambda_pm * pose_motion + weights.lambda_lm * leg_motion,
        });
        // Intermediate saves are synchronization points: the live state is
        // rounded to checkpoint precision so continuing equals resuming.
        if stage.checkpoint_every > 0
            && (epoch + 1) % stage.checkpoint_every == 0
            && epoch + 1 < stage.epochs
        {
            save_stage(
                out,
                &mut store,
                &mut adam,
                &rng,
                stage_config_json("bps", &model_cfg, stage),
                epoch + 1,
            )?;
        }
    }
    save_stage(
        out,
        &mut store,
        &mut adam,
        &rng,
        stage_config_json("bps", &model_cfg, stage),
        stage.epochs,
    )?;
    Ok(BpsTrainReport { epochs, skipped_samples: skipped })
}

// --------------------------------------------------------- repletion stage

#[derive(Debug, Clone, serde::Serialize)]
pub struct RpsEpochLog {
    pub epoch: usize,
    pub pose_motion: f64,
    pub leg_motion: f64,
    pub adversarial: f64,
    pub rtc: f64,
    pub total: f64,
    pub disc_loss: f64,
    pub rtc_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct RpsTrainReport {
    pub epochs: Vec<RpsEpochLog>,
    pub rtc_skipped_total: usize,
}

/// Scatters generated repletion columns into the conditioning channel,
/// producing the assembled full-sequence matrix.
fn assembled_matrix(input: &RpsInput, repletion: &Array3<f64>) -> Array2<f64> {
    let mut full = input.pose_channel.clone();
    for (i, &c) in input.repletion_columns.iter().enumerate() {
        for b in 0..repletion.dim().1 {
            for a in 0..3 {
                full[[3 * b + a, c]] = repletion[[i, b, a]];
            }
        }
    }
    full
}

/// Binary mask over columns: 1 on repletion columns, 0 elsewhere.
fn repletion_mask(input: &RpsInput, rows: usize) -> Array2<f64> {
    let mut mask = Array2::zeros((rows, input.pose_channel.ncols()));
    for &c in &input.repletion_columns {
        for r in 0..rows {
            mask[[r, c]] = 1.0;
        }
    }
    mask
}

/// Trains the repletion generator and discriminator with alternating
/// updates (one discriminator step, then one generator step per batch).
/// Beat conditioning comes from the frozen beat-stage checkpoint unless
/// `disable_bps` is set; `teacher_forcing_ratio` mixes in ground-truth
/// beat poses.
pub fn train_rps(
    cfg: &PipelineConfig,
    samples: &[TrainingSample],
    topo: &SkeletonTopology,
    bps_checkpoint: Option<&Path>,
    out_gen: &Path,
    out_disc: &Path,
) -> Result<RpsTrainReport> {
    require_samples(samples)?;
    let stage = &cfg.train.rps;
    let model_cfg = cfg.model.rps();
    let plan = cfg.loss.plan()?;
    let weights = &cfg.loss.weights();

    // Beat conditioning: generated by the frozen beat stage, ground truth
    // under teacher forcing, absent entirely under disable_bps.
    let beat_sources: Vec<Option<(Array3<f64>, Array3<f64>)>> = if cfg.ablate.disable_bps {
        samples.iter().map(|_| None).collect()
    } else {
        let ck = bps_checkpoint.ok_or_else(|| {
            Error::MissingCheckpoint("repletion training needs a beat-stage checkpoint".into())
        })?;
        let (bps_model, bps_store) = load_bps_model(ck, topo)?;
        let mut out = Vec::with_capacity(samples.len());
        for s in samples {
            let input = BpsInput::build(&s.feats, &s.sets, &s.seed_poses(), topo.num_bones())?;
            let generated = if input.gen_columns.is_empty() {
                Array3::zeros((0, topo.num_bones(), 3))
            } else {
                bps_forward(&bps_model, &bps_store, &input)?
            };
            out.push(Some((generated, s.gt_beat_poses())));
        }
        out
    };

    let gen = RpsGenerator::new(model_cfg.clone(), topo)?;
    let disc = RpsDiscriminator::new(model_cfg.clone(), topo)?;
    let mut gen_store = ParamStore::new();
    let mut disc_store = ParamStore::new();
    gen.init(&mut gen_store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e17));
    disc.init(&mut disc_store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd15c));
    let mut adam_gen = Adam::new(stage.lr, stage.beta1, stage.beta2);
    let mut adam_disc = Adam::new(stage.lr, stage.beta1, stage.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let pairs = leg_bone_pairs(topo);
    let mut epochs = Vec::new();
    let mut rtc_skipped_total = 0usize;
    for epoch in 0..stage.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut pm_sum = 0.0;
        let mut lm_sum = 0.0;
        let mut adv_sum = 0.0;
        let mut rtc_sum = 0.0;
        let mut disc_sum = 0.0;
        let mut count = 0.0;
        let mut rtc_skipped = 0usize;
        for (batch_id, batch) in order.chunks(stage.batch_size).enumerate() {
            // Per-sample inputs for this pass (fresh noise each epoch).
            let mut inputs = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                let noise = draw_noise(model_cfg.noise_dim, s.sets.t(), &mut rng);
                let (beats, use_beats) = match &beat_sources[i] {
                    None => (Array3::zeros((0, topo.num_bones(), 3)), false),
                    Some((generated, gt)) => {
                        let teach = cfg.ablate.teacher_forcing_ratio > 0.0
                            && rng.random_range(0.0..1.0) < cfg.ablate.teacher_forcing_ratio;
                        (if teach { gt.clone() } else { generated.clone() }, true)
                    }
                };
                let input = RpsInput::build(
                    &s.feats,
                    &s.sets,
                    &s.seed_poses(),
                    &beats,
                    use_beats,
                    noise,
                    topo.num_bones(),
                )?;
                inputs.push((i, input));
            }

            // Discriminator step on detached fakes.
            {
                let tape = Tape::new();
                let binder = Binder::new(&tape, &disc_store);
                let mut p_real = Vec::new();
                let mut p_fake = Vec::new();
                for (i, input) in &inputs {
                    let s = &samples[*i];
                    let (rep, _) = rps_generate(&gen, &gen_store, input)?;
                    let fake = assembled_matrix(input, &rep);
                    p_real.push(disc.forward_t(&binder, binder.constant(s.gt_matrix())));
                    p_fake.push(disc.forward_t(&binder, binder.constant(fake)));
                }
                let loss = adversarial_disc_loss_t(&tape, &p_real, &p_fake);
                let val = tape.scalar(loss);
                check_finite(val, &format!("rps disc epoch {epoch} batch {batch_id}"))?;
                let grads = tape.backward(loss);
                let grad_map = binder.collect_grads(&grads);
                adam_disc.step(&mut disc_store, &grad_map);
                disc_sum += val * batch.len() as f64;
            }

            // Generator step.
            {
                let tape = Tape::new();
                let gen_binder = Binder::new(&tape, &gen_store);
                let disc_binder = Binder::new(&tape, &disc_store);
                let mut pm_terms = Vec::new();
                let mut lm_terms = Vec::new();
                let mut p_fakes = Vec::new();
                let mut rtc_terms = Vec::new();
                for (i, input) in &inputs {
                    let s = &samples[*i];
                    let (motion, z) = gen.forward_t(&gen_binder, input);
                    let rows = 3 * topo.num_bones();
                    let mask = gen_binder.constant(repletion_mask(input, rows));
                    let channel = gen_binder.constant(input.pose_channel.clone());
                    let assembled = tape.add(tape.mul(motion, mask), channel);
                    let gt = gen_binder.constant(s.gt_matrix());
                    pm_terms.push(pose_motion_loss_t(&tape, gt, assembled, DistanceKind::SmoothL1, weights));
                    lm_terms.push(leg_motion_loss_t(&tape, gt, assembled, &pairs));
                    p_fakes.push(disc.forward_t(&disc_binder, assembled));
                    if !cfg.ablate.disable_rtc {
                        let detached = tape.value(assembled);
                        let selection = if cfg.ablate.fixed_reference_rtc {
                            min_abs_cossim_peer(&detached, &plan, 0).map(|nb| (0, nb))
                        } else {
                            select_contrast_segment(&detached, &plan, &mut rng).ok()
                        };
                        match selection {
                            Some((n, n_bar)) => {
                                rtc_terms.push(rtc_loss_t(&tape, z, n, n_bar, &plan)?)
                            }
                            None => rtc_skipped += 1,
                        }
                    }
                }
                let pm = mean_of(&tape, &pm_terms);
                let lm = mean_of(&tape, &lm_terms);
                let adv = adversarial_gen_loss_t(&tape, &p_fakes);
                let mut total = tape.add(
                    tape.add(tape.scale(pm, weights.lambda_pm), tape.scale(lm, weights.lambda_lm)),
                    tape.scale(adv, weights.lambda_gen),
                );
                let rtc_val = if rtc_terms.is_empty() {
                    0.0
                } else {
                    let rtc = mean_of(&tape, &rtc_terms);
                    total = tape.add(total, tape.scale(rtc, weights.lambda_rtc));
                    tape.scalar(rtc)
                };
                let total_val = tape.scalar(total);
                check_finite(total_val, &format!("rps gen epoch {epoch} batch {batch_id}"))?;
                let grads = tape.backward(total);
                let grad_map = gen_binder.collect_grads(&grads);
                adam_gen.step(&mut gen_store, &grad_map);
                pm_sum += tape.scalar(pm) * batch.len() as f64;
                lm_sum += tape.scalar(lm) * batch.len() as f64;
                adv_sum += tape.scalar(adv) * batch.len() as f64;
                rtc_sum += rtc_val * batch.len() as f64;
            }
            count += batch.len() as f64;
        }
        let pose_motion = pm_sum / count;
        let leg_motion = lm_sum / count;
        let adversarial = adv_sum / count;
        let rtc = rtc_sum / count;
        rtc_skipped_total += rtc_skipped;
        epochs.push(RpsEpochLog {
            epoch,
            pose_motion,
            leg_motion,
            adversarial,
            rtc,
            total: weights.lambda_pm * pose_motion
                + weights.lambda_lm * leg_motion
                + weights.lambda_gen * adversarial
                + weights.lambda_rtc * rtc,
            disc_loss: disc_sum / count,
            rtc_skipped,
        });
    }
    save_stage(
        out_gen,
        &mut gen_store,
        &mut adam_gen,
        &rng,
        stage_config_json("rps-gen", &model_cfg, stage),
        stage.epochs,
    )?;
    save_stage(
        out_disc,
        &mut disc_store,
        &mut adam_disc,
        &rng,
        stage_config_json("rps-disc", &model_cfg, stage),
        stage.epochs,
    )?;
    Ok(RpsTrainReport { epochs, rtc_skipped_total })
}

// -------------------------------------------------------- trajectory stage

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrajEpochLog {
    pub epoch: usize,
    pub root_translation: f64,
}

#[derive(Debug, Clone)]
pub struct TrajTrainReport {
    pub epochs: Vec<TrajEpochLog>,
}

/// Trains the trajectory predictor on repletion poses generated by the
/// frozen generator (detached), against ground-truth roots at the same
/// frames. Decoding is teacher-forced during training.
pub fn train_traj(
    cfg: &PipelineConfig,
    samples: &[TrainingSample],
    topo: &SkeletonTopology,
    rps_checkpoint: &Path,
    out: &Path,
) -> Result<TrajTrainReport> {
    require_samples(samples)?;
    let stage = &cfg.train.traj;
    let model_cfg = cfg.model.traj();
    let (gen, gen_store) = load_rps_generator(rps_checkpoint, topo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Generated poses are produced once per sample and reused each epoch.
    let mut cases = Vec::with_capacity(samples.len());
    for s in samples {
        let noise = draw_noise(gen.cfg.noise_dim, s.sets.t(), &mut rng);
        let input = RpsInput::build(
            &s.feats,
            &s.sets,
            &s.seed_poses(),
            &s.gt_beat_poses(),
            true,
            noise,
            topo.num_bones(),
        )?;
        let (rep, _) = rps_generate(&gen, &gen_store, &input)?;
        let frames = s.sets.repletion_frames();
        if frames.is_empty() {
            continue;
        }
        let poses = crate::losses::pose_matrix(&rep);
        let root = s.root_matrix();
        let mut gt = Array2::zeros((3, frames.len()));
        for (c, &f) in frames.iter().enumerate() {
            for a in 0..3 {
                gt[[a, c]] = root[[a, f - 1]];
            }
        }
        cases.push((poses, frames, gt));
    }
    if cases.is_empty() {
        return Err(Error::ManifestError("no samples with repletion frames".into()));
    }

    let tp = TrajectoryPredictor::new(model_cfg.clone(), topo)?;
    let mut store = ParamStore::new();
    tp.init(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7124));
    let mut adam = Adam::new(stage.lr, stage.beta1, stage.beta2);
    let weights = &cfg.loss.weights();

    let mut epochs = Vec::new();
    for epoch in 0..stage.epochs {
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut count = 0.0;
        for (batch_id, batch) in order.chunks(stage.batch_size).enumerate() {
            let tape = Tape::new();
            let binder = Binder::new(&tape, &store);
            let mut terms = Vec::new();
            for &i in batch {
                let (poses, frames, gt) = &cases[i];
                let pred = tp.forward_teacher_t(&binder, poses, frames, gt);
                let gt_var = binder.constant(gt.clone());
                terms.push(root_translation_loss_t(&tape, gt_var, pred, weights));
            }
            let loss = mean_of(&tape, &terms);
            let val = tape.scalar(loss);
            check_finite(val, &format!("traj epoch {epoch} batch {batch_id}"))?;
            let grads = tape.backward(loss);
            let grad_map = binder.collect_grads(&grads);
            adam.step(&mut store, &grad_map);
            loss_sum += val * batch.len() as f64;
            count += batch.len() as f64;
        }
        epochs.push(TrajEpochLog { epoch, root_translation: loss_sum / count });
    }
    save_stage(
        out,
        &mut store,
        &mut adam,
        &rng,
        stage_config_json("traj", &model_cfg, stage),
        stage.epochs,
    )?;
    Ok(TrajTrainReport { epochs })
}

/// Exposes the segment plan helper for callers that mirror the trainer's
/// contrastive selection (latent export, diagnostics).
pub fn contrast_plan(cfg: &PipelineConfig) -> Result<SegmentPlan> {
    cfg.loss.plan()
}
