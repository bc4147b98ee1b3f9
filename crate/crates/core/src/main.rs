fn main() {
    std::process::exit(fractal_spectra::cli::main_with_args(std::env::args_os()));
}
