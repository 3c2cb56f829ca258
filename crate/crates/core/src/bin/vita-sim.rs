fn main() {
    std::process::exit(vita_sim::cli::main_entry());
}
