/*
 * Copyright 2026 The llsim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef LLSIM_CLIENT_H_
#define LLSIM_CLIENT_H_

#include <cstddef>
#include <span>
#include <vector>

#include "llsim/data.h"
#include "llsim/model.h"
#include "llsim/tensors.h"

namespace llsim {

// Per-image activations, one row per image.
struct ForwardTrace {
  DenseMatrix conv_out;    // B x Fc1InputCols
  DenseMatrix fc1_preact;  // B x U
  DenseMatrix fc1_act;     // B x U
  DenseMatrix fc2_out;     // B x C*H*W
  DenseMatrix logits;      // B x num_classes
  double loss = 0.0;       // mean cross-entropy over the batch
};

// Gradient of the batch-mean loss, tensor by tensor. FC1 keeps the storage
// of the model it came from.
struct ClientUpdate {
  int client_index = 0;
  std::vector<double> conv_kernels;
  std::vector<double> conv_biases;
  Fc1Weights fc1_weights;
  std::vector<double> fc1_biases;
  DenseMatrix fc2_weights;
  std::vector<double> fc2_biases;
  DenseMatrix stub_weights;

  Storage fc1_storage() const {
    return std::holds_alternative<SparseMatrixCOO>(fc1_weights)
               ? Storage::kCoo
               : Storage::kDense;
  }
};

// Offsets of each tensor inside the flat parameter vector. Order: conv
// kernels, conv biases, FC1 weights (row-major), FC1 biases, FC2 weights,
// FC2 biases, stub weights.
struct FlatLayout {
  std::size_t conv_kernels = 0;
  std::size_t conv_biases = 0;
  std::size_t fc1_weights = 0;
  std::size_t fc1_biases = 0;
  std::size_t fc2_weights = 0;
  std::size_t fc2_biases = 0;
  std::size_t stub_weights = 0;
  std::size_t total = 0;
  std::size_t fc1_cols = 0;
  std::size_t fc1_units = 0;

  bool operator==(const FlatLayout&) const = default;
};

FlatLayout MakeFlatLayout(const AttackConfig& cfg);

void FlattenInto(const ClientUpdate& update, const FlatLayout& layout,
                 std::span<double> out);
std::vector<double> Flatten(const ClientUpdate& update,
                            const FlatLayout& layout);

// Same flat order applied to the model parameters themselves.
std::vector<double> FlattenParameters(const MaliciousModel& model);
// Overwrites parameters from a flat vector. Requires dense FC1 storage.
void AssignParameters(MaliciousModel& model, std::span<const double> flat);

// Throws kShapeMismatch when the batch does not fit the model.
ForwardTrace Forward(const MaliciousModel& model, const ImageBatch& batch);

// When trace_out is set it receives the forward pass the gradient used.
ClientUpdate Backward(const MaliciousModel& model, const ImageBatch& batch,
                      ForwardTrace* trace_out = nullptr);

// Plain gradient step on every tensor except, when freeze_conv is set, the
// convolution.
void ApplyGradientStep(MaliciousModel& model, const ClientUpdate& grad,
                       double lr, bool freeze_conv);

// local_steps of full-batch gradient descent with the conv layer frozen.
// Returns (initial - final) / lr, accumulated as the sum of the step
// gradients so that local_steps == 1 reproduces Backward() exactly.
// first_trace receives the forward pass of the first local step.
ClientUpdate FedAvgUpdate(const MaliciousModel& model, const ImageBatch& batch,
                          int local_steps, double lr,
                          ForwardTrace* first_trace = nullptr);

}  // namespace llsim

#endif  // LLSIM_CLIENT_H_
