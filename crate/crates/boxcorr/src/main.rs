use clap::Parser;

fn main() {
    let cli = boxcorr::cli::Cli::parse();
    std::process::exit(boxcorr::cli::run(cli));
}
