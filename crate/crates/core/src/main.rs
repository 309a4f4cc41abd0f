fn main() {
    std::process::exit(perception_imdp::run());
}
