// Generates the desk-scale synthetic 10-class dataset in IDX format.
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "nkd/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic IDX dataset generator"};
    std::string out_dir = "data/synth";
    nkd::SynthSpec spec;
    int test_count = 2000;
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--train", spec.count, "training sample count");
    app.add_option("--test", test_count, "test sample count");
    app.add_option("--classes", spec.classes, "class count");
    app.add_option("--size", spec.size, "image side length");
    app.add_option("--seed", spec.seed, "generator seed");
    app.add_option("--noise", spec.noise, "pixel noise stddev");
    app.add_option("--jitter", spec.angle_jitter, "angular jitter stddev");
    app.add_option("--frequency", spec.frequency, "grating frequency, cycles/px");
    CLI11_PARSE(app, argc, argv);

    try {
        std::filesystem::create_directories(out_dir);
        nkd::Dataset train = nkd::make_synth_dataset(spec, nkd::Dataset::Split::train);
        nkd::SynthSpec test_spec = spec;
        test_spec.count = test_count;
        nkd::Dataset test = nkd::make_synth_dataset(test_spec, nkd::Dataset::Split::test);
        nkd::write_synth_idx(out_dir, "train", train);
        nkd::write_synth_idx(out_dir, "t10k", test);
        std::cout << "wrote " << train.count << " train / " << test.count << " test images ("
                  << spec.size << "x" << spec.size << ", " << spec.classes << " classes) to "
                  << out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
