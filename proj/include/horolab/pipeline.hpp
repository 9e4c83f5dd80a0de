#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "horolab/br_equid.hpp"
#include "horolab/cone_count.hpp"
#include "horolab/eigenfn.hpp"
#include "horolab/patterson.hpp"
#include "horolab/run_config.hpp"
#include "json.hpp"

namespace horolab {

struct PipelineOptions {
    std::string out_dir = "horolab-out";
    std::string cache_dir;  // empty: no cache
    bool quiet = false;
};

// Runs the stages of one config in-process, sharing the orbit ball, the
// critical exponent and the measure between stages. Every artifact carries the
// config hash; timings go to stderr only, so reruns are byte-identical.
class Pipeline {
   public:
    Pipeline(RunConfig cfg, PipelineOptions opt);

    static const std::vector<std::string>& subcommands();
    // Runs one subcommand ("all" runs every stage the config supports) and
    // returns the JSON summary written as <stage>.json.
    nlohmann::json run(const std::string& subcommand);

    const RunConfig& config() const { return cfg_; }
    const std::string& config_hash() const { return hash_; }
    bool synthetic() const { return !cfg_.group.has_value(); }

    const GroupPresentation& group();
    const OrbitBall& ball();
    double delta();
    double x0();
    // Compressed measure in the configured normalization.
    const PattersonApprox& patterson();
    const EigenContext& context();
    const EquidReport& equid_report();

   private:
    nlohmann::json stage_enumerate();
    nlohmann::json stage_delta();
    nlohmann::json stage_patterson();
    nlohmann::json stage_eigen();
    nlohmann::json stage_horocycle();
    nlohmann::json stage_equid();
    nlohmann::json stage_brd();
    nlohmann::json stage_count();
    nlohmann::json stage_census();

    std::string path(const std::string& file) const;
    std::string comment(const std::string& stage) const;
    nlohmann::json stamp(const std::string& stage) const;
    void write_json(const std::string& stage, const nlohmann::json& j) const;
    void log(const std::string& msg) const;
    void require_group(const std::string& stage) const;

    RunConfig cfg_;
    PipelineOptions opt_;
    std::string hash_;
    std::optional<GroupPresentation> group_;
    std::optional<OrbitBall> ball_;
    std::optional<DeltaEstimate> delta_;
    std::optional<PattersonApprox> patterson_;
    std::unique_ptr<EigenContext> ctx_;
    std::optional<EquidReport> equid_;
};

}  // namespace horolab
