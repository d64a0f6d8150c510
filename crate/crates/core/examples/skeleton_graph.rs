//! The builtin 27-joint skeleton: hop distances, the normalized adjacency
//! factor, and the graph text format.
//!
//! ```bash
//! cargo run --example skeleton_graph
//! ```

use slgtformer::graph::SkeletonGraph;
use slgtformer::Result;

fn main() -> Result<()> {
    let g = SkeletonGraph::builtin_slgt27();
    let psi = g.shortest_path_matrix();
    println!("{} joints, {} edges, diameter {}", g.node_count(), g.edges().len(), psi.diameter());

    let names = g.node_names();
    for (a, b) in [(0, 3), (5, 6), (7, 17), (16, 26)] {
        println!("hops {:>16} -> {:<16} {}", names[a], names[b], psi.get(a, b));
    }

    let f = g.normalized_adjacency_factor();
    println!("factor row for the left wrist:");
    for j in 0..g.node_count() {
        let v = f.get(5, j);
        if v != 0.0 {
            println!("  {:<16} {v:.4}", names[j]);
        }
    }

    // a custom graph in the text format
    let text = "nodes 4\nnode 0 root\nnode 1 a\nnode 2 b\nnode 3 c\nedge 0 1\nedge 1 2\nedge 1 3\n";
    let small = SkeletonGraph::parse(text)?;
    println!("custom graph distances: {:?}", small.shortest_path_matrix().as_slice());
    print!("{}", small.to_text());
    Ok(())
}
