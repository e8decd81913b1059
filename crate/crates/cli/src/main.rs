use std::process::ExitCode;

fn main() -> ExitCode {
    match outcode_cli::run(std::env::args_os()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", f.line);
            ExitCode::from(f.code as u8)
        }
    }
}
