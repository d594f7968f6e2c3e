mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use kcf::error::ErrorCategory;

use commands::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let line = serde_json::json!({
                "error": "validation",
                "kind": "usage",
                "message": e
                    .to_string()
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty() && !l.starts_with("For more information"))
                    .collect::<Vec<_>>()
                    .join(" "),
            });
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (name, code) = match e.category() {
                ErrorCategory::Validation => ("validation", 2),
                ErrorCategory::Numerical => ("numerical", 3),
                ErrorCategory::Io => ("io", 4),
            };
            let line = serde_json::json!({
                "error": name,
                "kind": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
