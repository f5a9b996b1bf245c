// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(gateforge::cli::run_cli(std::env::args_os()));
}
