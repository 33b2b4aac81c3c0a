fn main() {
    std::process::exit(situate_cli::main_entry());
}
