//! Temporary calibration harness (deleted before release).

use groovesynth_core::audiofeat::detect_beats;
use groovesynth_core::dataset::{synth_dataset, window_corpus, DatasetConfig};
use groovesynth_core::metrics::{
    beat_alignment_score, kinematic_beats_of, kinetic_features, motion_diversity, DEFAULT_BAS_SIGMA,
};
use groovesynth_core::pipeline::{
    generate, train_bps, train_rps, train_traj, GenerateCheckpoints, PipelineConfig,
};
use groovesynth_core::skeleton::kinetic_velocity;

fn cfg_with(seed: u64, lam_gen: f64, lam_rtc: f64, rps_epochs: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(
        None,
        &[
            "model.scale=reduced".to_string(),
            "train.bps.epochs=50".to_string(),
            "train.bps.lr=3e-3".to_string(),
            format!("train.rps.epochs={rps_epochs}"),
            "train.rps.lr=3e-3".to_string(),
            format!("train.traj.epochs={}", std::env::var("TRAJ_EPOCHS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(20)),
            format!("train.traj.lr={}", std::env::var("TRAJ_LR").unwrap_or_else(|_| "1e-3".to_string())),
            format!("loss.lambda_gen={lam_gen}"),
            format!("loss.lambda_rtc={lam_rtc}"),
        ],
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

#[test]
#[ignore]
fn explore() {
    let data_cfg = DatasetConfig::default();
    let n_clips: usize = std::env::var("CLIPS").ok().and_then(|v| v.parse().ok()).unwrap_or(8);
    let clips = synth_dataset(n_clips, 777, &data_cfg);
    let topo = clips[0].topo.clone();
    let (samples, _) = window_corpus(&clips, &data_cfg).unwrap();
    let eval_cfg = DatasetConfig { window_secs: 14.0, ..data_cfg.clone() };
    let eval_clips = synth_dataset(8, 888, &eval_cfg);
    let dir = tempfile::tempdir().unwrap();

    let lam_gen: f64 = std::env::var("LAM_GEN").ok().and_then(|v| v.parse().ok()).unwrap_or(0.5);
    let lam_rtc: f64 = std::env::var("LAM_RTC").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
    let epochs: usize = std::env::var("EPOCHS").ok().and_then(|v| v.parse().ok()).unwrap_or(60);
    let seed: u64 = std::env::var("SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(22);
    println!("== lam_gen={lam_gen} lam_rtc={lam_rtc} epochs={epochs} seed={seed}");

    let cfg = cfg_with(seed, lam_gen, lam_rtc, epochs);
    let bps_ck = dir.path().join("bps.ck");
    let r = train_bps(&cfg, &samples, &topo, &bps_ck, None).unwrap();
    println!(
        "bps pm {:.4} -> {:.4}",
        r.epochs.first().unwrap().pose_motion,
        r.epochs.last().unwrap().pose_motion
    );

    for (tag, disable_rtc, disable_bps) in
        [("full", false, false), ("nortc", true, false), ("nobps", false, true)]
    {
        let mut acfg = cfg.clone();
        acfg.ablate.disable_rtc = disable_rtc;
        acfg.ablate.disable_bps = disable_bps;
        let bps = if disable_bps { None } else { Some(bps_ck.as_path()) };
        let gen_ck = dir.path().join(format!("{tag}.gen.ck"));
        let disc_ck = dir.path().join(format!("{tag}.disc.ck"));
        let rep = train_rps(&acfg, &samples, &topo, bps, &gen_ck, &disc_ck).unwrap();
        let last = rep.epochs.last().unwrap();
        let traj_ck = dir.path().join(format!("{tag}.traj.ck"));
        train_traj(&acfg, &samples, &topo, &gen_ck, &traj_ck).unwrap();

        let t_s = acfg.data.seed_len;
        let wf = acfg.data.window_frames();
        let mut feats = Vec::new();
        let mut feats_w2 = Vec::new();
        let mut bas = std::collections::BTreeMap::new();
        let mut kb_counts = Vec::new();
        for (i, clip) in eval_clips.iter().enumerate() {
            let seed_pose = clip.pose.slice_frames(0, t_s);
            let ckpts = GenerateCheckpoints { bps, generator: &gen_ck, trajectory: &traj_ck };
            let pose = generate(&acfg, &clip.audio, &seed_pose, &topo, &ckpts, 9000 + i as u64).unwrap();
            let all_beats = detect_beats(&clip.audio, acfg.data.fps, 100).unwrap();
            for sigma in [1.0, 1.5, 3.0] {
                for (scope, lo) in [("full", t_s), ("w2", wf)] {
                    let beats: Vec<usize> = all_beats.iter().copied()
                        .filter(|&b| b > lo && b <= pose.len()).collect();
                    let r = beat_alignment_score(&pose, &topo, &beats, sigma).unwrap();
                    *bas.entry(format!("{scope}@{sigma}")).or_insert(0.0) += r.score;
                }
            }
            kb_counts.push(kinematic_beats_of(&pose, &topo).unwrap().len());
            feats.push(kinetic_features(&pose, &topo).unwrap());
            let w2 = pose.slice_frames(wf, pose.len());
            feats_w2.push(kinetic_features(&w2, &topo).unwrap());
        }
        let n = eval_clips.len() as f64;
        let md = motion_diversity(&feats).unwrap();
        let md_w2 = motion_diversity(&feats_w2).unwrap();
        let bas_str: Vec<String> = bas.iter().map(|(k, v)| format!("{k} {:.3}", v / n)).collect();
        println!(
            "{tag}: pm {:.4} rtc {:.4} | md_k {md:.4} md_w2 {md_w2:.4} | {} | kbeats {:?}",
            last.pose_motion,
            last.rtc,
            bas_str.join("  "),
            kb_counts,
        );
    }
}

#[test]
#[ignore]
fn noise_jitter_probe() {
    use groovesynth_core::rps::{draw_noise, rps_generate, RpsInput};
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let data_cfg = DatasetConfig::default();
    let clips = synth_dataset(8, 777, &data_cfg);
    let topo = clips[0].topo.clone();
    let (samples, _) = window_corpus(&clips, &data_cfg).unwrap();
    let eval_clips = synth_dataset(2, 888, &data_cfg);
    let (eval_samples, _) = window_corpus(&eval_clips, &data_cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = cfg_with(22, 0.5, 1.0, 60);
    let bps_ck = dir.path().join("bps.ck");
    train_bps(&cfg, &samples, &topo, &bps_ck, None).unwrap();
    let gen_ck = dir.path().join("gen.ck");
    let disc_ck = dir.path().join("disc.ck");
    train_rps(&cfg, &samples, &topo, Some(bps_ck.as_path()), &gen_ck, &disc_ck).unwrap();
    let (gen, gen_store) = groovesynth_core::pipeline::load_rps_generator(&gen_ck, &topo).unwrap();

    let s = &eval_samples[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for mode in ["iid", "zero", "constant"] {
        let noise = match mode {
            "iid" => draw_noise(gen.cfg.noise_dim, s.sets.t(), &mut rng),
            "zero" => Array2::zeros((gen.cfg.noise_dim, s.sets.t())),
            _ => {
                let col = draw_noise(gen.cfg.noise_dim, 1, &mut rng);
                Array2::from_shape_fn((gen.cfg.noise_dim, s.sets.t()), |(r, _)| col[[r, 0]])
            }
        };
        let input = RpsInput::build(
            &s.feats, &s.sets, &s.seed_poses(), &s.gt_beat_poses(), true, noise, topo.num_bones(),
        )
        .unwrap();
        let (rep, _) = rps_generate(&gen, &gen_store, &input).unwrap();
        // Assemble and measure bone-motion kv with a zero root.
        let mut lv = s.pose.line_vectors.clone();
        let rep_frames = s.sets.repletion_frames();
        for (i, &f) in rep_frames.iter().enumerate() {
            for b in 0..topo.num_bones() {
                for a in 0..3 {
                    lv[[f - 1, b, a]] = rep[[i, b, a]];
                }
            }
        }
        let t = lv.dim().0;
        let pose = groovesynth_core::skeleton::PoseSequence::new(
            10.0, lv, Some(Array3::zeros((t, 3, 1)).index_axis(ndarray::Axis(2), 0).to_owned()),
        )
        .unwrap();
        let kv = kinetic_velocity(&pose, &topo).unwrap();
        let kb = kinematic_beats_of(&pose, &topo).unwrap();
        println!(
            "{mode}: kv_mean {:.3} kv_max {:.3} kinematic_beats {} (music beats {:?})",
            kv.mean().unwrap(),
            kv.iter().cloned().fold(0.0f64, f64::max),
            kb.len(),
            s.sets.beats(),
        );
    }
}
