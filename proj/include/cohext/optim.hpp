#pragma once

// Adam with bias correction and no weight decay.

#include "cohext/nn.hpp"

#include <vector>

namespace cohext::optim {

struct AdamConfig {
    double lr{2e-5};
    double beta1{0.9};
    double beta2{0.999};
    double eps{1e-8};
};

class Adam {
public:
    Adam() = default;
    Adam(nn::ParamList params, const AdamConfig& config);

    // Applies one update from the accumulated gradients, then zeroes them.
    void step();
    void zero_grad() const;

    [[nodiscard]] const nn::ParamList& params() const { return params_; }
    [[nodiscard]] long steps_taken() const { return t_; }

private:
    nn::ParamList params_;
    AdamConfig config_;
    std::vector<ag::Matrix> m_;
    std::vector<ag::Matrix> v_;
    long t_{0};
};

}  // namespace cohext::optim
