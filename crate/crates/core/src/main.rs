fn main() {
    std::process::exit(swarmtrace::run());
}
