fn main() {
    std::process::exit(occufield_cli::run_command(std::env::args_os()));
}
