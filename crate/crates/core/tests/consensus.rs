use ppem_core::consensus::{run_consensus, ConsensusOptions, ConsensusProblem, Mode};
use ppem_core::graph::{connected_geometric_graph, connectivity_radius};
use ppem_core::rng::{normal, SeedStream};

#[test]
fn converges_to_mean_on_random_graphs() {
    let root = SeedStream::new(2024);
    for g_idx in 0..100u64 {
        let seeds = root.nth(g_idx);
        let n = 6 + (g_idx as usize % 20);
        let (g, _) = connected_geometric_graph(n, connectivity_radius(n), seeds.child("graph"), 200).unwrap();
        let mut rng = seeds.child("inputs").rng();
        let inputs: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng, 3.0), normal(&mut rng, 1.0)]).collect();
        let mean = [
            inputs.iter().map(|v| v[0]).sum::<f64>() / n as f64,
            inputs.iter().map(|v| v[1]).sum::<f64>() / n as f64,
        ];
        let problem = ConsensusProblem::new(&g, inputs, 0.4).unwrap();
        let mode = if g_idx % 2 == 0 { Mode::Synchronous } else { Mode::Asynchronous };
        let opts = ConsensusOptions {
            mode,
            sigma_lambda: 100.0,
            tol: 1e-9,
            max_iters: 2_000_000,
            ..ConsensusOptions::default()
        };
        let out = run_consensus(&problem, &opts, seeds.child("run")).unwrap();
        for y in &out.averages {
            assert!((y[0] - mean[0]).abs() < 1e-8 && (y[1] - mean[1]).abs() < 1e-8, "graph {g_idx}");
        }
    }
}

#[test]
fn large_graph_noise_levels() {
    let n = 80;
    let (g, _) = connected_geometric_graph(n, connectivity_radius(n), SeedStream::new(7), 100).unwrap();
    let mut rng = SeedStream::new(8).rng();
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| vec![normal(&mut rng, 1.0)]).collect();
    let mean = inputs.iter().map(|v| v[0]).sum::<f64>() / n as f64;
    let problem = ConsensusProblem::new(&g, inputs, 0.4).unwrap();
    for sigma in [0.0, 1.0, 1e2, 1e4] {
        let opts = ConsensusOptions {
            sigma_lambda: sigma,
            tol: 1e-6,
            ..ConsensusOptions::default()
        };
        let out = run_consensus(&problem, &opts, SeedStream::new(9)).unwrap();
        for y in &out.averages {
            assert!((y[0] - mean).abs() <= 1e-6, "sigma {sigma}");
        }
    }
}
