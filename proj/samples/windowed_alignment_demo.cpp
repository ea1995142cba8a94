// Compares the dense and windowed alignment losses on random feature maps and
// prints the compute/memory accounting for a few window sizes.
#include <iostream>

#include "sal/losses.hpp"
#include "sal/rng.hpp"

using namespace sal;

int main() {
    RngStream rng(42);
    const int c = 16, h = 8, w = 8;

    Tensor<double> fa({c, h, w}), fb({c, h, w});
    for (long long i = 0; i < fa.numel(); ++i) fa[i] = rng.normal();
    for (long long i = 0; i < fb.numel(); ++i) fb[i] = rng.normal();

    LinearMap<double> embed = LinearMap<double>::identity(c);
    PixelEmbedding<double> xa = normalize_embed(fa, embed);
    PixelEmbedding<double> xb = normalize_embed(fb, embed);

    std::cout << "dense LA loss: " << local_alignment_loss(xa, xb) << "\n";
    for (int omega : {2, 4, 8}) {
        ComplexityReport rep;
        const double loss = windowed_alignment_loss(xa, xb, omega, omega,
                                                    static_cast<AlignmentTrace<double>*>(nullptr),
                                                    &rep);
        std::cout << "omega=" << omega << "  WLA=" << loss << "  macs=" << rep.mac_count
                  << "  peak_sim_entries=" << rep.peak_similarity_entries << "\n";
    }
    return 0;
}
