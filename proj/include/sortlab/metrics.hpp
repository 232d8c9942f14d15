#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace sortlab {

// Per-step training record. sort_loss appears only on steps where the
// auxiliary update fired, sft_path_loss on diagnostic steps, wall_ms only
// when timing is enabled.
struct MetricsRecord {
    int64_t step = 0;
    double mean_reward = 0.0;
    int all_wrong_count = 0;
    int64_t buffer_size = 0;
    int64_t sort_updates_so_far = 0;
    double mean_response_length = 0.0;
    double mean_token_entropy = 0.0;
    double grpo_loss = 0.0;
    std::optional<double> sort_loss;
    std::optional<double> sft_path_loss;
    std::optional<double> wall_ms;

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j{{"step", step},
                                 {"mean_reward", mean_reward},
                                 {"all_wrong_count", all_wrong_count},
                                 {"buffer_size", buffer_size},
                                 {"sort_updates_so_far", sort_updates_so_far},
                                 {"mean_response_length", mean_response_length},
                                 {"mean_token_entropy", mean_token_entropy},
                                 {"grpo_loss", grpo_loss}};
        if (sort_loss) j["sort_loss"] = *sort_loss;
        if (sft_path_loss) j["sft_path_loss"] = *sft_path_loss;
        if (wall_ms) j["wall_ms"] = *wall_ms;
        return j;
    }

    static MetricsRecord from_json(const nlohmann::json& j) {
        MetricsRecord r;
        r.step = j.at("step").get<int64_t>();
        r.mean_reward = j.at("mean_reward").get<double>();
        r.all_wrong_count = j.at("all_wrong_count").get<int>();
        r.buffer_size = j.at("buffer_size").get<int64_t>();
        r.sort_updates_so_far = j.at("sort_updates_so_far").get<int64_t>();
        r.mean_response_length = j.at("mean_response_length").get<double>();
        r.mean_token_entropy = j.at("mean_token_entropy").get<double>();
        r.grpo_loss = j.at("grpo_loss").get<double>();
        if (j.contains("sort_loss")) r.sort_loss = j.at("sort_loss").get<double>();
        if (j.contains("sft_path_loss")) r.sft_path_loss = j.at("sft_path_loss").get<double>();
        if (j.contains("wall_ms")) r.wall_ms = j.at("wall_ms").get<double>();
        return r;
    }
};

// Sole writer of the metrics file; one line appended and flushed per step.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open " + path);
    }

    void append(const MetricsRecord& r) {
        out_ << r.to_json().dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

inline std::vector<MetricsRecord> load_metrics_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<MetricsRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(MetricsRecord::from_json(nlohmann::json::parse(line)));
    }
    return out;
}

}  // namespace sortlab
