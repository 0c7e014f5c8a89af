use evorobogami_core::controller::GaitTable;
use evorobogami_core::simulator::{
    initial_pose, register_planar, step, BodyModel, PlanarTransform, SimConfig, Simulator,
};
use evorobogami_core::{Genome, Terrain, TerrainKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cost(src: &[[f64; 2]], dst: &[[f64; 2]], theta: f64) -> f64 {
    let n = src.len() as f64;
    let (c, s) = (theta.cos(), theta.sin());
    let cs = src
        .iter()
        .fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
    let cd = dst
        .iter()
        .fold([0.0, 0.0], |a, p| [a[0] + p[0] / n, a[1] + p[1] / n]);
    let t = [
        cd[0] - (c * cs[0] - s * cs[1]),
        cd[1] - (s * cs[0] + c * cs[1]),
    ];
    src.iter()
        .zip(dst)
        .map(|(p, q)| {
            let x = c * p[0] - s * p[1] + t[0] - q[0];
            let y = s * p[0] + c * p[1] + t[1] - q[1];
            x * x + y * y
        })
        .sum()
}

fn transform_cost(src: &[[f64; 2]], dst: &[[f64; 2]], t: &PlanarTransform) -> f64 {
    src.iter()
        .zip(dst)
        .map(|(p, q)| {
            let r = t.apply(*p);
            (r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)
        })
        .sum()
}

/// Dense scan over the angle, then golden-section refinement.
fn brute_force_angle(src: &[[f64; 2]], dst: &[[f64; 2]]) -> f64 {
    let n = 7200;
    let grid = |k: usize| -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / n as f64;
    let best = (0..n)
        .min_by(|&a, &b| cost(src, dst, grid(a)).total_cmp(&cost(src, dst, grid(b))))
        .unwrap();
    let (mut lo, mut hi) = (grid(best) - 0.002, grid(best) + 0.002);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if cost(src, dst, a) < cost(src, dst, b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}

#[test]
fn registration_matches_brute_force_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..200 {
        let n = rng.gen_range(2..=6);
        let src: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)])
            .collect();
        let theta: f64 = rng.gen_range(-0.5..0.5);
        let (tx, ty) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let dst: Vec<[f64; 2]> = src
            .iter()
            .map(|p| {
                [
                    theta.cos() * p[0] - theta.sin() * p[1] + tx + rng.gen_range(-0.5..0.5),
                    theta.sin() * p[0] + theta.cos() * p[1] + ty + rng.gen_range(-0.5..0.5),
                ]
            })
            .collect();
        let solved = register_planar(&src, &dst);
        let oracle = brute_force_angle(&src, &dst);
        let got = transform_cost(&src, &dst, &solved);
        let want = cost(&src, &dst, oracle);
        assert!(
            got <= want + 1e-9,
            "case {case}: cost {got} vs oracle {want}"
        );
        assert!(
            (solved.angle() - oracle).abs() < 1e-6,
            "case {case}: angle {} vs {oracle}",
            solved.angle()
        );
    }
}

fn random_genomes(seed: u64, n: usize) -> Vec<Genome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Genome::random(&mut rng)).collect()
}

#[test]
fn stepping_is_finite_continuous_and_timed() {
    let gait = GaitTable::default();
    let dt = SimConfig::default().dt;
    for kind in TerrainKind::ALL {
        let terrain = Terrain::new(kind);
        for g in random_genomes(kind as u64 + 5, 12) {
            let model = BodyModel::from_genome(&g).unwrap();
            let mut state = initial_pose(&model, &terrain);
            let mut prev = state.body.position;
            for _ in 0..6000 {
                step(&mut state, &model, &terrain, &gait, dt).unwrap();
                let p = state.body.position;
                assert!(p.iter().all(|v| v.is_finite()), "non-finite pose on {kind}");
                assert!(state.body.heading.iter().all(|v| v.is_finite()));
                let moved = ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
                assert!(moved <= 3.0, "teleport of {moved} cm on {kind}");
                prev = p;
                if !terrain.in_bounds(p[0], p[1]) {
                    break;
                }
            }
            assert!((state.elapsed - state.steps as f64 * dt).abs() < 1e-9);
        }
    }
}

#[test]
fn mirrored_robots_step_as_reflections() {
    let gait = GaitTable::default();
    let dt = SimConfig::default().dt;
    for kind in [TerrainKind::Ground, TerrainKind::Sine] {
        let terrain = Terrain::new(kind);
        for g in random_genomes(kind as u64 + 70, 10) {
            let m = g.mirror();
            let (ma, mb) = (
                BodyModel::from_genome(&g).unwrap(),
                BodyModel::from_genome(&m).unwrap(),
            );
            let (mut a, mut b) = (initial_pose(&ma, &terrain), initial_pose(&mb, &terrain));
            for k in 0..6000 {
                step(&mut a, &ma, &terrain, &gait, dt).unwrap();
                step(&mut b, &mb, &terrain, &gait, dt).unwrap();
                let (pa, pb) = (a.body.pose(), b.body.pose());
                assert!(
                    (pa.x - pb.x).abs() < 1e-9,
                    "step {k}: x {} vs {}",
                    pa.x,
                    pb.x
                );
                assert!(
                    (pa.y + pb.y).abs() < 1e-9,
                    "step {k}: y {} vs {}",
                    pa.y,
                    pb.y
                );
                assert!((pa.z - pb.z).abs() < 1e-9);
                assert!((pa.yaw + pb.yaw).abs() < 1e-9);
                if !terrain.in_bounds(pa.x, pa.y) {
                    break;
                }
            }
        }
    }
}

#[test]
fn simulate_with_frames_agrees_with_plain_simulate() {
    let terrain = Terrain::sine();
    let plain = Simulator::new(terrain.clone(), SimConfig::default()).unwrap();
    let framed = Simulator::new(terrain, SimConfig::default().with_frames()).unwrap();
    for g in random_genomes(9, 20) {
        let a = plain.simulate(&g).unwrap();
        let b = framed.simulate(&g).unwrap();
        assert_eq!(
            (a.fitness, a.dx, a.dy, a.fell_off),
            (b.fitness, b.dx, b.dy, b.fell_off)
        );
        assert!(a.frames.is_empty());
        assert!(b.frames.len() == 601 || (b.fell_off && b.frames.len() <= 602));
    }
}
