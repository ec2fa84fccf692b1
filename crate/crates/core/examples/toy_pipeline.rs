//! End to end through the command-line layer: init, train the whole toy
//! curriculum, then generate text, an image and speech.

fn omnistack(home: &std::path::Path, args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["omnistack", "--home", home.to_str().unwrap()];
    argv.extend_from_slice(args);
    let code = omnistack::cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr());
    anyhow::ensure!(code == 0, "{args:?} exited with {code}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let home = std::env::temp_dir().join("omnistack-toy");
    if home.exists() {
        std::fs::remove_dir_all(&home)?;
    }
    omnistack(&home, &["init", "--toy"])?;
    omnistack(&home, &["train", "--all"])?;
    let prompt = home.join("prompt.txt");
    std::fs::write(&prompt, "a blue square")?;
    let p = prompt.to_str().unwrap();
    omnistack(&home, &["generate", "--prompt-file", p, "--max-tokens", "32"])?;
    omnistack(&home, &["generate", "--prompt-file", p, "--modality-out", "image", "--width", "96", "--height", "64"])?;
    omnistack(&home, &["generate", "--prompt-file", p, "--modality-out", "audio", "--duration", "2"])?;
    Ok(())
}
