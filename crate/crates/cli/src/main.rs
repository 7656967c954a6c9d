fn main() {
    std::process::exit(tgbench_cli::main_with(std::env::args_os()));
}
