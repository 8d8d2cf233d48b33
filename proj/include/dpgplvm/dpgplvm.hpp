#ifndef DPGPLVM_DPGPLVM_HPP_
#define DPGPLVM_DPGPLVM_HPP_

#include "dpgplvm/common.hpp"
#include "dpgplvm/dp_bound.hpp"
#include "dpgplvm/gp_bound.hpp"
#include "dpgplvm/inference.hpp"
#include "dpgplvm/initialize.hpp"
#include "dpgplvm/kernels.hpp"
#include "dpgplvm/model.hpp"
#include "dpgplvm/objective.hpp"
#include "dpgplvm/optimizer.hpp"
#include "dpgplvm/synthetic.hpp"
#include "dpgplvm/transform.hpp"

#endif // DPGPLVM_DPGPLVM_HPP_
