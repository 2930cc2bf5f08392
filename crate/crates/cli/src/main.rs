fn main() {
    let env = praaline_cli::Environment::from_process();
    let code = praaline_cli::run(
        std::env::args_os(),
        &env,
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    std::process::exit(code);
}
