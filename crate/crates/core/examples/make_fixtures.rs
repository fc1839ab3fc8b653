use prophet_core::instance::{Instance, ValueAtom};
use prophet_core::matching::{brute_force_marginals, MatchingInstance, TypeGraph};

fn uniform_graph(offline: usize, online: usize, types: usize, weights: Vec<Vec<f64>>) -> TypeGraph {
    let p = 1.0 / types as f64;
    let mut dist: Vec<(usize, f64)> = (0..types).map(|v| (v, p)).collect();
    let partial: f64 = dist[..types - 1].iter().map(|d| d.1).sum();
    dist[types - 1].1 = 1.0 - partial;
    TypeGraph::new(offline, types, vec![dist; online], weights).unwrap()
}

fn main() {
    let atom = |v: f64, p: f64| ValueAtom { value: v, prob: p };
    let inst = Instance::new(vec![
        vec![atom(3.0, 0.25), atom(1.0, 0.75)],
        vec![atom(2.0, 0.5), atom(0.0, 0.5)],
        vec![atom(4.0, 0.1), atom(0.5, 0.9)],
    ])
    .unwrap();
    std::fs::write("fixtures/secretary_small.json", inst.to_json()).unwrap();

    let g = uniform_graph(3, 6, 3, vec![
        vec![3.0, 1.0, 0.5],
        vec![1.0, 2.0, 1.5],
        vec![0.5, 1.0, 2.5],
    ]);
    let (_, marg) = brute_force_marginals(&g).unwrap();
    let mi = MatchingInstance { graph: g, x: marg };
    std::fs::write("fixtures/matching_iid_3x6.json", mi.to_json()).unwrap();

    let g = uniform_graph(2, 3, 2, vec![vec![2.0, 0.5], vec![0.5, 1.5]]);
    let (_, marg) = brute_force_marginals(&g).unwrap();
    let mi = MatchingInstance { graph: g, x: marg };
    std::fs::write("fixtures/matching_small_2x3.json", mi.to_json()).unwrap();
    println!("fixtures written");
}
