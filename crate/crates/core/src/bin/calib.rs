// Temporary calibration probe; not part of the deliverable.
use easycache::engine::{integrate, RunConfig};
use easycache::fields::{MixtureFlowField, MixtureOracle};
use easycache::harness::{matched_baseline_config, mean_psnr, mean_speedup};
use easycache::metrics::trace_stats;
use easycache::policy::{KUpdate, PolicyConfig};
use easycache::rng::DetRng;
use easycache::schedule::Schedule;
use easycache::tensor::{l1_mean, Tensor1D};

fn easy(tau: f64, warmup: usize, k: KUpdate) -> PolicyConfig {
    PolicyConfig::EasyCache { tau, warmup, k_update: k }
}

fn two_point_p(a: f64, b: f64, p1: f64) -> MixtureFlowField {
    MixtureFlowField::new(
        vec![Tensor1D::new(vec![a]).unwrap(), Tensor1D::new(vec![b]).unwrap()],
        vec![p1, 1.0 - p1],
    )
    .unwrap()
}

fn circle_at(center: (f64, f64), radius: f64, degrees: &[f64]) -> MixtureFlowField {
    let anchors = degrees
        .iter()
        .map(|d| {
            let th = d.to_radians();
            Tensor1D::new(vec![
                center.0 + radius * th.cos(),
                center.1 + radius * th.sin(),
            ])
            .unwrap()
        })
        .collect();
    MixtureFlowField::new(anchors, vec![1.0 / degrees.len() as f64; degrees.len()]).unwrap()
}

fn blobs(rng: &mut DetRng, w: usize, h: usize, n: usize, amp: f64) -> Vec<f64> {
    let mut grid = vec![0.0; w * h];
    for blob in 0..n {
        let cx = 2.0 + (w as f64 - 4.0) * rng.uniform();
        let cy = 2.0 + (h as f64 - 4.0) * rng.uniform();
        let sigma = 1.5 + 2.0 * rng.uniform();
        let a = (0.5 + rng.uniform()) * amp * if blob % 2 == 0 { 1.0 } else { -1.0 };
        for r in 0..h {
            for c in 0..w {
                let dx = c as f64 - cx;
                let dy = r as f64 - cy;
                grid[r * w + c] += a * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    grid
}

/// Binary cascade over `levels` perturbation amplitudes, rescaled so the
/// mean anchor l1 is `target_l1`.
fn digits_cascade(seed: u64, levels: &[f64], target_l1: f64) -> MixtureFlowField {
    let (w, h) = (16usize, 16usize);
    let mut rng = DetRng::seed_from_u64(seed);
    let mut nodes: Vec<Vec<f64>> = vec![blobs(&mut rng, w, h, 4, levels[0])];
    for &scale in &levels[1..] {
        let mut next = Vec::new();
        for node in &nodes {
            for _ in 0..2 {
                let pert = blobs(&mut rng, w, h, 4, scale);
                next.push(node.iter().zip(&pert).map(|(a, b)| a + b).collect());
            }
        }
        nodes = next;
    }
    // widen to 16 leaves if the cascade is shallower than 4 levels
    while nodes.len() < 16 {
        let mut next = Vec::new();
        for node in &nodes {
            for _ in 0..2 {
                let pert = blobs(&mut rng, w, h, 4, *levels.last().unwrap());
                next.push(node.iter().zip(&pert).map(|(a, b)| a + b).collect());
            }
        }
        nodes = next;
    }
    let mean_l1: f64 = nodes
        .iter()
        .map(|v| v.iter().map(|x| x.abs()).sum::<f64>() / v.len() as f64)
        .sum::<f64>()
        / nodes.len() as f64;
    let scale = target_l1 / mean_l1;
    let anchors: Vec<Tensor1D> = nodes
        .into_iter()
        .map(|v| Tensor1D::new_grid(v.iter().map(|x| x * scale).collect(), w, h).unwrap())
        .collect();
    MixtureFlowField::new(anchors, vec![1.0 / 16.0; 16]).unwrap()
}

struct Probe {
    cv_ok: usize,
    growth_ok: usize,
    min_margin: f64,
    max_last_cv: f64,
}

fn probe_field(field: &MixtureFlowField, steps: usize, seeds: &[u64]) -> Probe {
    let schedule = Schedule::uniform(steps, 0.02).unwrap();
    let mut cv_ok = 0;
    let mut growth_ok = 0;
    let mut min_margin = f64::INFINITY;
    let mut max_last_cv: f64 = 0.0;
    for &seed in seeds {
        let oracle = MixtureOracle::new(field.clone());
        let x0 = easycache::fields::sample_initial(field.dim(), seed).unwrap();
        let (_, trace) =
            integrate(&oracle, &schedule, x0, None, KUpdate::Local, 1, steps).unwrap();
        let st = trace_stats(&trace);
        min_margin = min_margin.min(st.k_cv_first_fifth - st.k_cv_last_half);
        max_last_cv = max_last_cv.max(st.k_cv_last_half);
        if st.k_cv_last_half < st.k_cv_first_fifth {
            cv_ok += 1;
        }
        let start = (steps as f64 * 0.4) as usize;
        if (start + 1..steps).all(|t| trace.rows[t].x_norm >= trace.rows[t - 1].x_norm - 1e-12) {
            growth_ok += 1;
        }
    }
    Probe { cv_ok, growth_ok, min_margin, max_last_cv }
}

fn k_profile(field: &MixtureFlowField, steps: usize, seed: u64) -> Vec<f64> {
    let schedule = Schedule::uniform(steps, 0.02).unwrap();
    let oracle = MixtureOracle::new(field.clone());
    let x0 = easycache::fields::sample_initial(field.dim(), seed).unwrap();
    let (_, trace) = integrate(&oracle, &schedule, x0, None, KUpdate::Local, 1, steps).unwrap();
    trace.rows.iter().map(|r| r.k.unwrap_or(0.0)).collect()
}

fn field_to_file(field: &MixtureFlowField, grid: Option<(usize, usize)>, path: &str) {
    let file = easycache::presets::AnchorSetFile {
        dim: field.dim(),
        width: grid.map(|g| g.0),
        height: grid.map(|g| g.1),
        anchors: field.anchors().iter().map(|a| a.values().to_vec()).collect(),
        priors: field.priors().to_vec(),
    };
    std::fs::write(path, serde_json::to_string(&file).unwrap()).unwrap();
}

fn trend_and_baselines(path: &str, seeds: &[u64]) {
    let base = RunConfig {
        field: path.into(),
        dim: None,
        steps: 50,
        delta_end: 0.02,
        seed: 0,
        policy: easy(5.0, 10, KUpdate::Local),
    };
    let mut prev_sp = 0.0;
    let mut prev_ps = f64::INFINITY;
    let mut sp_inv = 0;
    let mut ps_inv = 0;
    for tau in [2.0, 3.0, 5.0, 7.0, 10.0] {
        let mut c = base.clone();
        c.policy = easy(tau, 10, KUpdate::Local);
        let sp = mean_speedup(&c, seeds).unwrap();
        let ps = mean_psnr(&c, seeds).unwrap();
        if sp < prev_sp {
            sp_inv += 1;
        }
        if ps > prev_ps {
            ps_inv += 1;
        }
        prev_sp = sp;
        prev_ps = ps;
        println!("    tau {tau}: speedup {sp:.4} psnr {ps:.3}");
    }
    println!("    inversions: speedup {sp_inv}, psnr {ps_inv}");
    for (name, k) in [("local", KUpdate::Local), ("ema", KUpdate::Ema), ("avg", KUpdate::Avg)] {
        let mut c = base.clone();
        c.policy = easy(5.0, 10, k);
        let sp = mean_speedup(&c, seeds).unwrap();
        println!("    k-update {name}: speedup {sp:.4}");
    }
    let target = mean_speedup(&base, seeds).unwrap();
    let easy_psnr = mean_psnr(&base, seeds).unwrap();
    println!("    easycache: speedup {target:.4} psnr {easy_psnr:.3}");
    for variant in ["output-relative", "probabilistic", "static", "no-recompute"] {
        let mc = matched_baseline_config(&base, variant, target, seeds).unwrap();
        let sp = mean_speedup(&mc, seeds).unwrap();
        let ps = mean_psnr(&mc, seeds).unwrap();
        println!(
            "    {variant}: speedup {sp:.4} ({:+.1}%) margin {:+.3} dB [{}]",
            100.0 * (sp / target - 1.0),
            easy_psnr - ps,
            match &mc.policy {
                PolicyConfig::Static { interval, .. } => format!("interval={interval}"),
                PolicyConfig::Probabilistic { p, .. } => format!("p={p:.3}"),
                PolicyConfig::OutputRelative { tau, .. } => format!("tau={tau:.2}"),
                PolicyConfig::NoRecompute { warm } => format!("warm={warm}"),
                _ => String::new(),
            }
        );
    }
}

fn main() {
    let seeds: Vec<u64> = (0..10).collect();

    println!("== 1-d initial draws for seeds 0..9 ==");
    let draws: Vec<f64> = seeds
        .iter()
        .map(|&s| easycache::fields::sample_initial(1, s).unwrap().values()[0])
        .collect();
    println!("  {draws:?}");

    println!("== two-point candidates over seeds 0..9 ==");
    for (a, b, p1) in [
        (25.0, -25.0, 0.5),
        (50.0, -50.0, 0.5),
        (80.0, -80.0, 0.5),
        (50.0, -60.0, 0.5),
        (120.0, -120.0, 0.5),
    ] {
        let f = two_point_p(a, b, p1);
        let p = probe_field(&f, 50, &seeds);
        println!(
            "  ({a},{b},p={p1}): cv {}/10 margin {:+.3} maxlast {:.3} growth {}/10",
            p.cv_ok, p.min_margin, p.max_last_cv, p.growth_ok
        );
    }

    println!("== circle candidates over seeds 0..9 ==");
    let uniform: Vec<f64> = (0..8).map(|j| j as f64 * 45.0).collect();
    let two_scale = vec![0.0, 30.0, 90.0, 120.0, 180.0, 210.0, 270.0, 300.0];
    for (name, center, radius, degs) in [
        ("r25-uniform", (0.0, 0.0), 25.0, uniform.clone()),
        ("r40-uniform", (0.0, 0.0), 40.0, uniform.clone()),
        ("r60-uniform", (0.0, 0.0), 60.0, uniform.clone()),
        ("r40-two-scale", (0.0, 0.0), 40.0, two_scale.clone()),
        ("off20-r15", (20.0, 0.0), 15.0, uniform.clone()),
    ] {
        let f = circle_at(center, radius, &degs);
        let p = probe_field(&f, 50, &seeds);
        println!(
            "  {name}: cv {}/10 margin {:+.3} maxlast {:.3} growth {}/10",
            p.cv_ok, p.min_margin, p.max_last_cv, p.growth_ok
        );
    }

    println!("== digits cascade candidates over seeds 0..9 ==");
    for (name, levels, l1) in [
        ("L[4,1.2,0.45,0.15]-2.5", vec![4.0, 1.2, 0.45, 0.15], 2.5),
        ("L[4,1.2,0.5,0.2]-3.0", vec![4.0, 1.2, 0.5, 0.2], 3.0),
        ("L[5,1.5,0.5,0.18]-3.0", vec![5.0, 1.5, 0.5, 0.18], 3.0),
        ("L[4,1.0,0.35,0.12]-2.2", vec![4.0, 1.0, 0.35, 0.12], 2.2),
        ("L[6,1.5,0.4,0.1]-3.0", vec![6.0, 1.5, 0.4, 0.1], 3.0),
    ] {
        let f = digits_cascade(0x5EED_D161, &levels, l1);
        let p = probe_field(&f, 50, &seeds);
        println!(
            "  {name}: cv {}/10 margin {:+.3} maxlast {:.3} growth {}/10",
            p.cv_ok, p.min_margin, p.max_last_cv, p.growth_ok
        );
    }

    println!("== k profile (seed 0) for digits L[4,1.2,0.45,0.15]-2.5 ==");
    {
        let f = digits_cascade(0x5EED_D161, &[4.0, 1.2, 0.45, 0.15], 2.5);
        let prof = k_profile(&f, 50, 0);
        let fmt: Vec<String> = prof.iter().map(|k| format!("{k:.4}")).collect();
        println!("  {}", fmt.join(" "));
    }

    for (name, levels, l1) in [
        ("L[4,1.2,0.45,0.15]-2.5", vec![4.0, 1.2, 0.45, 0.15], 2.5),
        ("L[4,1.2,0.5,0.2]-3.0", vec![4.0, 1.2, 0.5, 0.2], 3.0),
        ("L[5,1.5,0.5,0.18]-3.0", vec![5.0, 1.5, 0.5, 0.18], 3.0),
    ] {
        println!("== digits {name} full battery ==");
        let f = digits_cascade(0x5EED_D161, &levels, l1);
        field_to_file(&f, Some((16, 16)), "/tmp/cand_digits.json");
        trend_and_baselines("/tmp/cand_digits.json", &seeds);
    }
}
