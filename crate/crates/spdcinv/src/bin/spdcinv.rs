fn main() {
    // placeholder until the run module lands
    eprintln!("spdcinv: command-line interface not wired up yet");
    std::process::exit(2);
}
