#include "resformer/optim.hpp"

#include <stdexcept>

namespace resformer {

void AdamWConfig::validate() const {
    if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("betas must lie in [0, 1)");
    if (!(eps > 0)) throw std::invalid_argument("eps must be > 0");
    if (!(weight_decay >= 0)) throw std::invalid_argument("weight_decay must be >= 0");
}

}  // namespace resformer
