//! Parse a model file and run the batch checks on it, as the CLI does.

use finsler_berwald::cli::{run, Command};
use finsler_berwald::model_file::parse_model;

const MODEL: &str = r#"
[model]
name = "sphere_randers"
coordinates = ["th", "ph"]
description = "round sphere with a Killing, non-parallel one-form: not Berwald"

[metric]
g_thth = "1"
g_phph = "sin(th)^2"

[oneform]
ph = "k * sin(th)^2"

[parameters]
k = 0.3

[lagrangian]
kind = "alpha-beta"
profile = "randers"

[sampling]
box = [[0.6, 2.5], [-3.0, 3.0]]
seed = 5
"#;

fn main() {
    let model = match parse_model(MODEL) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(3);
        }
    };
    for cmd in [Command::Identities, Command::Classify, Command::ReportAll] {
        match run(cmd, &model) {
            Ok(out) => print!("{}", out.report.summary()),
            Err(e) => println!("{}: {e}", cmd.name()),
        }
    }
    let bad = MODEL.replace("sin(th)^2\"\n\n[oneform]", "sin(th)^^2\"\n\n[oneform]");
    if let Err(e) = parse_model(&bad) {
        println!("malformed file: {e}");
    }
}
