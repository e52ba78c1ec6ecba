use infomax3d_cli::{cli, dispatch, exit_code, resolve_config};

fn main() {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = resolve_config(name, sub).and_then(|cfg| dispatch(name, &cfg));
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(exit_code(&e));
    }
}
