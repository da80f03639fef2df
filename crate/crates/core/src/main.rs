fn main() {
    let mut out = String::new();
    let code = picsou::cli::run_cli(std::env::args_os(), &mut out);
    print!("{out}");
    std::process::exit(code);
}
