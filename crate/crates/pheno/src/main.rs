fn main() {
    std::process::exit(pheno::cli::run(std::env::args_os()));
}
