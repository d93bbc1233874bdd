#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "itw/errors.hpp"

namespace itw::ad {

// Reverse-mode tape. Nodes are recorded in creation order; backward() walks
// the tape in reverse, so any value computed through the ops below gets exact
// gradients without per-model derivative code.
struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::function<void()> backward;  // pushes this->grad into parents
};

using NodePtr = std::shared_ptr<Node>;

class Tape {
public:
    // Backward closures capture the node that owns them, so each node holds a
    // reference cycle with itself; cut the closures when the tape goes away.
    ~Tape() {
        for (auto& n : nodes_) n->backward = nullptr;
    }

    NodePtr make(std::vector<double> value) {
        auto n = std::make_shared<Node>();
        n->value = std::move(value);
        n->grad.assign(n->value.size(), 0.0);
        nodes_.push_back(n);
        return n;
    }

    NodePtr leaf(std::vector<double> value) { return make(std::move(value)); }

    NodePtr scalar(double v) { return make({v}); }

    NodePtr add(const NodePtr& a, const NodePtr& b) {
        check_same(a, b, "add");
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] + b->value[i];
        auto out = make(std::move(v));
        out->backward = [out, a, b] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i];
                b->grad[i] += out->grad[i];
            }
        };
        return out;
    }

    NodePtr sub(const NodePtr& a, const NodePtr& b) {
        check_same(a, b, "sub");
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] - b->value[i];
        auto out = make(std::move(v));
        out->backward = [out, a, b] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i];
                b->grad[i] -= out->grad[i];
            }
        };
        return out;
    }

    NodePtr mul(const NodePtr& a, const NodePtr& b) {
        check_same(a, b, "mul");
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * b->value[i];
        auto out = make(std::move(v));
        out->backward = [out, a, b] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] * b->value[i];
                b->grad[i] += out->grad[i] * a->value[i];
            }
        };
        return out;
    }

    NodePtr div(const NodePtr& a, const NodePtr& b) {
        check_same(a, b, "div");
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] / b->value[i];
        auto out = make(std::move(v));
        out->backward = [out, a, b] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] / b->value[i];
                b->grad[i] -= out->grad[i] * a->value[i] / (b->value[i] * b->value[i]);
            }
        };
        return out;
    }

    NodePtr scale(const NodePtr& a, double c) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->value[i] * c;
        auto out = make(std::move(v));
        out->backward = [out, a, c] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * c;
        };
        return out;
    }

    NodePtr neg(const NodePtr& a) { return scale(a, -1.0); }

    // y = W x, W row-major (rows x cols).
    NodePtr matvec(const NodePtr& w, const NodePtr& x, std::size_t rows, std::size_t cols) {
        if (w->value.size() != rows * cols || x->value.size() != cols) {
            throw NumericError("matvec: shape mismatch");
        }
        std::vector<double> v(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            const double* wi = w->value.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) s += wi[j] * x->value[j];
            v[i] = s;
        }
        auto out = make(std::move(v));
        out->backward = [out, w, x, rows, cols] {
            for (std::size_t i = 0; i < rows; ++i) {
                const double g = out->grad[i];
                if (g == 0.0) continue;
                double* wgi = w->grad.data() + i * cols;
                const double* wi = w->value.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    wgi[j] += g * x->value[j];
                    x->grad[j] += g * wi[j];
                }
            }
        };
        return out;
    }

    // y = W^T x, W row-major (rows x cols), x has length rows, y length cols.
    NodePtr matvec_t(const NodePtr& w, const NodePtr& x, std::size_t rows, std::size_t cols) {
        if (w->value.size() != rows * cols || x->value.size() != rows) {
            throw NumericError("matvec_t: shape mismatch");
        }
        std::vector<double> v(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
            const double xi = x->value[i];
            const double* wi = w->value.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) v[j] += wi[j] * xi;
        }
        auto out = make(std::move(v));
        out->backward = [out, w, x, rows, cols] {
            for (std::size_t i = 0; i < rows; ++i) {
                double xg = 0.0;
                double* wgi = w->grad.data() + i * cols;
                const double* wi = w->value.data() + i * cols;
                for (std::size_t j = 0; j < cols; ++j) {
                    wgi[j] += out->grad[j] * x->value[i];
                    xg += out->grad[j] * wi[j];
                }
                x->grad[i] += xg;
            }
        };
        return out;
    }

    NodePtr dot(const NodePtr& a, const NodePtr& b) {
        check_same(a, b, "dot");
        double s = 0.0;
        for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
        auto out = make({s});
        out->backward = [out, a, b] {
            const double g = out->grad[0];
            for (std::size_t i = 0; i < a->value.size(); ++i) {
                a->grad[i] += g * b->value[i];
                b->grad[i] += g * a->value[i];
            }
        };
        return out;
    }

    NodePtr concat(const std::vector<NodePtr>& parts) {
        std::vector<double> v;
        for (const auto& p : parts) v.insert(v.end(), p->value.begin(), p->value.end());
        auto out = make(std::move(v));
        out->backward = [out, parts] {
            std::size_t offset = 0;
            for (const auto& p : parts) {
                for (std::size_t i = 0; i < p->value.size(); ++i) {
                    p->grad[i] += out->grad[offset + i];
                }
                offset += p->value.size();
            }
        };
        return out;
    }

    NodePtr sigmoid(const NodePtr& a) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-a->value[i]));
        auto out = make(std::move(v));
        out->backward = [out, a] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] * out->value[i] * (1.0 - out->value[i]);
            }
        };
        return out;
    }

    NodePtr tanh_(const NodePtr& a) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a->value[i]);
        auto out = make(std::move(v));
        out->backward = [out, a] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] * (1.0 - out->value[i] * out->value[i]);
            }
        };
        return out;
    }

    NodePtr exp_(const NodePtr& a) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a->value[i]);
        auto out = make(std::move(v));
        out->backward = [out, a] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] * out->value[i];
            }
        };
        return out;
    }

    // log with a floor so probabilities clamped at 1e-12 stay finite.
    NodePtr safelog(const NodePtr& a, double floor = 1e-12) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(std::max(a->value[i], floor));
        auto out = make(std::move(v));
        out->backward = [out, a, floor] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                if (a->value[i] > floor) a->grad[i] += out->grad[i] / a->value[i];
            }
        };
        return out;
    }

    NodePtr sqrt_(const NodePtr& a) {
        std::vector<double> v(a->value.size());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sqrt(a->value[i]);
        auto out = make(std::move(v));
        out->backward = [out, a] {
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->grad[i] * 0.5 / out->value[i];
            }
        };
        return out;
    }

    NodePtr sum(const NodePtr& a) {
        double s = 0.0;
        for (double x : a->value) s += x;
        auto out = make({s});
        out->backward = [out, a] {
            for (std::size_t i = 0; i < a->value.size(); ++i) a->grad[i] += out->grad[0];
        };
        return out;
    }

    // Gathers size-1 nodes into one vector node.
    NodePtr stack(const std::vector<NodePtr>& scalars) {
        std::vector<double> v;
        v.reserve(scalars.size());
        for (const auto& s : scalars) v.push_back(s->value.at(0));
        auto out = make(std::move(v));
        out->backward = [out, scalars] {
            for (std::size_t i = 0; i < scalars.size(); ++i) {
                scalars[i]->grad[0] += out->grad[i];
            }
        };
        return out;
    }

    NodePtr pick(const NodePtr& a, std::size_t index) {
        auto out = make({a->value.at(index)});
        out->backward = [out, a, index] { a->grad[index] += out->grad[0]; };
        return out;
    }

    NodePtr softmax(const NodePtr& a) {
        const double mx = *std::max_element(a->value.begin(), a->value.end());
        std::vector<double> v(a->value.size());
        double z = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) z += (v[i] = std::exp(a->value[i] - mx));
        for (double& x : v) x /= z;
        auto out = make(std::move(v));
        out->backward = [out, a] {
            double inner = 0.0;
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                inner += out->grad[i] * out->value[i];
            }
            for (std::size_t i = 0; i < out->grad.size(); ++i) {
                a->grad[i] += out->value[i] * (out->grad[i] - inner);
            }
        };
        return out;
    }

    NodePtr logsumexp(const NodePtr& a) {
        const double mx = *std::max_element(a->value.begin(), a->value.end());
        double z = 0.0;
        for (double x : a->value) z += std::exp(x - mx);
        auto out = make({mx + std::log(z)});
        out->backward = [out, a] {
            const double g = out->grad[0];
            for (std::size_t i = 0; i < a->value.size(); ++i) {
                a->grad[i] += g * std::exp(a->value[i] - out->value[0]);
            }
        };
        return out;
    }

    // a_t = sum_k weights_k * rows_k where the rows are constant inputs.
    NodePtr weighted_sum(const NodePtr& weights, std::shared_ptr<std::vector<std::vector<double>>> rows) {
        const std::size_t width = rows->front().size();
        std::vector<double> v(width, 0.0);
        for (std::size_t k = 0; k < rows->size(); ++k) {
            const double wk = weights->value.at(k);
            for (std::size_t j = 0; j < width; ++j) v[j] += wk * (*rows)[k][j];
        }
        auto out = make(std::move(v));
        out->backward = [out, weights, rows, width] {
            for (std::size_t k = 0; k < rows->size(); ++k) {
                double s = 0.0;
                for (std::size_t j = 0; j < width; ++j) s += out->grad[j] * (*rows)[k][j];
                weights->grad[k] += s;
            }
        };
        return out;
    }

    // Embedding-row lookup with gradient into the table.
    NodePtr row(const NodePtr& table, std::size_t index, std::size_t width) {
        std::vector<double> v(table->value.begin() + index * width,
                              table->value.begin() + (index + 1) * width);
        auto out = make(std::move(v));
        out->backward = [out, table, index, width] {
            for (std::size_t j = 0; j < width; ++j) {
                table->grad[index * width + j] += out->grad[j];
            }
        };
        return out;
    }

    // Cosine similarity between two equal-width vectors.
    NodePtr cosine(const NodePtr& a, const NodePtr& b) {
        auto num = dot(a, b);
        auto denom = sqrt_(mul(dot(a, a), dot(b, b)));
        if (denom->value[0] == 0.0) throw NumericError("cosine: zero vector");
        return div(num, denom);
    }

    void backward(const NodePtr& root) {
        if (root->value.size() != 1) throw NumericError("backward: root must be scalar");
        root->grad[0] = 1.0;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if ((*it)->backward) (*it)->backward();
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    static void check_same(const NodePtr& a, const NodePtr& b, const char* op) {
        if (a->value.size() != b->value.size()) {
            throw NumericError(std::string(op) + ": size mismatch");
        }
    }

    std::vector<NodePtr> nodes_;
};

}  // namespace itw::ad
