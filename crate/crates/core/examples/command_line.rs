//! Drive the `slgt` command line from code: write a synthetic dataset and run
//! the gradient check, printing each exit code.
//!
//! ```bash
//! cargo run --example command_line
//! ```

use slgtformer::cli::main_with_args;

fn main() {
    let dir = std::env::temp_dir().join("slgt_cli_example");
    let dir = dir.to_string_lossy().into_owned();
    let runs: [&[&str]; 3] = [
        &["slgt", "synth", "--out", &dir, "--classes", "3", "--per-class", "4"],
        &["slgt", "gradcheck"],
        &["slgt", "eval", "--data", "missing.txt"],
    ];
    for args in runs {
        let code = main_with_args(args.iter().copied());
        println!("{} -> exit {code}", args[1..].join(" "));
    }
}
