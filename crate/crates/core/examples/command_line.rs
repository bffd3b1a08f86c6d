//! Drives the command-line entry point in-process and lists what it wrote.
//!
//! cargo run --release -p calpro --example command_line

fn main() -> std::io::Result<()> {
    let out = std::env::temp_dir().join("calpro-example");
    let out_arg = out.to_string_lossy().into_owned();
    for cmd in ["gen-data", "pipeline"] {
        let code = calpro::cli::main_with_args(["calpro", "--seed", "2", "--out", &out_arg, cmd]);
        println!("{cmd}: {code:?}");
    }
    let mut files: Vec<_> = std::fs::read_dir(&out)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name())
        .collect();
    files.sort();
    println!("{files:?}");
    let metrics = std::fs::read_to_string(out.join("metrics.json"))?;
    println!("{}", metrics.lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
