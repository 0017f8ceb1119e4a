use clap::Parser;

fn main() {
    let cli = gridprice::cli::Cli::parse();
    std::process::exit(gridprice::cli::execute(cli));
}
