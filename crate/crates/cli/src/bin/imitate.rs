use anyhow::Result;

fn main() -> Result<()> {
    let tokens: Vec<String> = std::env::args().skip(1).collect();
    if tokens.iter().any(|t| t == "--help" || t == "-h") {
        println!("usage: imitate --key value ...\nkeys: --{}", imitate_cli::args::valid_keys().join(", --"));
        return Ok(());
    }
    let args = imitate_cli::parse_args(&tokens)?;
    imitate_cli::run(&args)
}
