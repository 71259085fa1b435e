use clap::Parser;
use dilequiv_cli::{execute, JobConfig};

fn main() {
    let config = JobConfig::parse();
    std::process::exit(execute(&config));
}
