fn main() -> anyhow::Result<()> {
    aha_bench::cli::main()
}
