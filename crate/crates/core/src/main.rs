fn main() {
    let code = mtsc::cli::dispatch(std::env::args().collect());
    std::process::exit(code);
}
