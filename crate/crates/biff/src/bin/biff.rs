use clap::error::ErrorKind;
use clap::Parser;

fn main() {
    let cli = match biff::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => biff::cli::EXIT_OK,
                _ => biff::cli::EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    std::process::exit(biff::cli::run(cli));
}
