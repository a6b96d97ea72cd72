//! Echo forecaster speaking the newline-delimited JSON protocol on stdio.

use std::io;
use std::process::ExitCode;

use divscale_core::backend::mock::{serve, MockExit, MockOptions};

fn main() -> ExitCode {
    let opts = match MockOptions::from_args(std::env::args().skip(1)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("mock-backend: {e}");
            return ExitCode::from(1);
        }
    };
    match serve(&opts, io::stdin().lock(), io::stdout().lock()) {
        Ok(MockExit::Crashed) => ExitCode::from(3),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-backend: {e}");
            ExitCode::from(2)
        }
    }
}
