use clap::Parser;

fn main() {
    // Die quietly when a downstream pipe closes (e.g. `dircr inspect | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = dircr::cli::Cli::parse();
    if let Err(e) = dircr::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
