// Quantizes a freshly initialized model to 4-bit groups and reports the memory
// footprint next to the fp32 original, plus the worst absolute reconstruction
// error observed across every weight group.

#include <cmath>
#include <iostream>

#include "prunelab/prunelab.hpp"

int main() {
    using namespace prunelab;

    ModelConfig mcfg;  // desk-scale defaults
    TransformerModel model = init_model<float>(mcfg, /*seed=*/3);

    QuantConfig qcfg;  // 4-bit, groups of 64
    const QuantizedModel qm = quantize_model(model, qcfg);

    double worst_err = 0.0;
    bool bound_ok = true;
    const auto check = [&](const Mat<float>& w, const QuantizedTensor& q) {
        for (size_t i = 0; i < w.data.size(); ++i) {
            const double err = std::abs(static_cast<double>(w.data[i]) - q.value_at(i));
            const double scale = q.groups[i / q.group_size].scale;
            worst_err = std::max(worst_err, err);
            bound_ok = bound_ok && err <= scale / 2.0 + 1e-6;
        }
    };
    for (size_t l = 0; l < model.layers.size(); ++l) {
        check(model.layers[l].wq, qm.layers[l].wq);
        check(model.layers[l].wk, qm.layers[l].wk);
        check(model.layers[l].wv, qm.layers[l].wv);
        check(model.layers[l].wo, qm.layers[l].wo);
        check(model.layers[l].w1, qm.layers[l].w1);
        check(model.layers[l].w2, qm.layers[l].w2);
    }

    std::cout << "fp32 footprint:\n" << memory_report(model).to_string() << "\n";
    std::cout << "4-bit footprint:\n" << memory_report(qm).to_string() << "\n";
    std::cout << "worst |w - deq(q(w))| across layer weights: " << worst_err << "\n";

    if (!bound_ok) {
        std::cerr << "FAILED: an element exceeded the scale/2 reconstruction bound\n";
        return 1;
    }
    if (memory_report(qm).total_bytes >= memory_report(model).total_bytes) {
        std::cerr << "FAILED: quantized footprint is not smaller than fp32\n";
        return 1;
    }
    return 0;
}
