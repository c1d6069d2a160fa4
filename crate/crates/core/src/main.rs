use clap::Parser;

use errdecomp::cli::{run, Args};

fn main() {
    let args = Args::parse();
    match run(&args) {
        Ok(outcome) => {
            println!("{}", outcome.summary.trim_end());
            println!(
                "wrote {} files to {}",
                outcome.manifest.files.len() + 1,
                args.out.display()
            );
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
