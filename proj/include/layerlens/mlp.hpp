#pragma once

#include <cstdint>
#include <vector>

#include "layerlens/common.hpp"

namespace layerlens {

enum class MlpOutput { softmax, sigmoid };

struct MlpTrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 15;           // epochs without val-accuracy improvement
  double l1 = 0.0;             // L1 strength on weight matrices only
  double stop_val_accuracy = 2.0;  // >1 disables the threshold stop
  std::uint64_t seed = 0;
};

struct MlpTrainLog {
  std::vector<double> train_loss;    // full-train loss after each epoch
  std::vector<double> val_accuracy;  // after each epoch
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  int epochs_run = 0;
};

// Fully-connected ReLU net. widths = input, hidden..., output units.
// softmax output pairs with k>=2 units, sigmoid with exactly 1 (binary).
class MlpNet {
 public:
  MlpNet(std::vector<int> widths, MlpOutput output, std::uint64_t seed);

  const std::vector<int>& widths() const { return widths_; }
  MlpOutput output() const { return output_; }
  int n_hidden() const { return static_cast<int>(widths_.size()) - 2; }

  Vector flat_params() const;
  void set_flat_params(const Vector& p);
  Eigen::Index n_params() const;

  // Mean loss (+ L1 penalty) and its gradient in flat layout.
  double loss_grad_flat(const Matrix& x, const Eigen::VectorXi& y, double l1,
                        Vector* grad) const;

  Matrix predict_proba(const Matrix& x) const;  // n x k (sigmoid: n x 2)
  Eigen::VectorXi predict(const Matrix& x) const;
  double accuracy(const Matrix& x, const Eigen::VectorXi& y) const;

  // Post-activation values per hidden layer plus final pre-squash logits.
  std::vector<Matrix> forward_capture(const Matrix& x) const;

  // Max |weight| into the first hidden layer, per input feature.
  Vector input_saliency() const;

  // Adam on minibatches; restores the best-validation-epoch weights.
  MlpTrainLog train(const Matrix& xtr, const Eigen::VectorXi& ytr,
                    const Matrix& xval, const Eigen::VectorXi& yval,
                    const MlpTrainConfig& cfg);

  const std::vector<Matrix>& weight_matrices() const { return w_; }
  const std::vector<Vector>& bias_vectors() const { return b_; }
  void set_weights(std::vector<Matrix> w, std::vector<Vector> b);

 private:
  std::vector<int> widths_;
  MlpOutput output_;
  std::vector<Matrix> w_;  // w_[i]: widths[i+1] x widths[i]
  std::vector<Vector> b_;
};

}  // namespace layerlens
